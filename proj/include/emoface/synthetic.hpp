// SPDX-License-Identifier: Apache-2.0
// Procedural stand-in corpora: keyword-emotion dialogues and drawn faces
// whose geometry follows their AU vector.
#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "emoface/au_bridge.hpp"
#include "emoface/data_prep.hpp"
#include "emoface/tensor.hpp"

namespace emoface::synthetic {

struct FaceIdentity {
  std::array<double, 3> skin{}, hair{}, background{}, iris{};
  double face_rx = 0.3, face_ry = 0.36;
  double eye_dx = 0.13, eye_y = 0.47;
  double mouth_y = 0.72, mouth_half_width = 0.12;
};

FaceIdentity make_identity(std::size_t index);

/// [3,size,size] image in [-1,1]. Mouth curvature follows AU12 - AU15,
/// mouth opening AU26, brow height (AU01 + AU02)/2 up and AU04 down, inner
/// brow tilt AU01 - AU04, eye opening AU05.
Tensor render_face(const FaceIdentity& who, const AuVector& au, std::size_t size);

std::vector<Dialogue> dialogues();

struct Face {
  FaceRecord record;
  Tensor image;
};

/// 16 images of 8 identities: each identity once neutral and once happy,
/// sad, surprised or angry (full intensity for p01-p04, 0.6 for p05-p08).
std::vector<Face> faces(std::size_t size = 64);

/// Writes dialogues.jsonl, faces/index.csv, faces/au.csv, faces/images/*.png.
void write_corpus(const std::filesystem::path& dir, std::size_t size = 64);

}  // namespace emoface::synthetic
