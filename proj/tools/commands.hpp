// SPDX-License-Identifier: Apache-2.0
// Command implementations shared by the emoface CLI and the acceptance runner.
#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "emoface/face_gan.hpp"
#include "emoface/nlg_model.hpp"
#include "emoface/pipeline.hpp"

namespace emoface::cli {

struct PrepOptions {
  std::filesystem::path dialogues, faces_dir, au_csv, out;
  std::uint64_t seed = 0;
  int min_freq = 2;
  std::size_t context_turns = 3;
  NonNeutralPolicy non_neutral = NonNeutralPolicy::neutral;
};

/// Writes <out>/{train,valid,test}/dialogues.jsonl, <out>/<split>/faces/ (index,
/// AU CSV, copied images), <out>/vocab.txt from the training split and
/// <out>/summary.json.
void prep(const PrepOptions& opt, std::ostream& log);

/// A prep output directory trains on its train/ split; any other directory
/// is used as is.
std::filesystem::path training_dir(const std::filesystem::path& data_dir);

NlgConfig load_nlg_config(const std::filesystem::path& path);
FaceGanConfig load_face_config(const std::filesystem::path& path);

struct NlgData {
  Vocabulary vocab;
  std::vector<NlgExample> examples;
};

/// Vocabulary from the dialogues at min_freq, examples from every dialogue.
NlgData nlg_data(const std::vector<Dialogue>& dialogues, const NlgConfig& cfg);

struct NlgRun {
  NlgConfig config;
  NlgData data;
  std::vector<NlgEpochMetrics> history;
  NlgEval train_eval;
};

/// Trains on <data>/dialogues.jsonl and saves a checkpoint when out is set.
NlgRun train_nlg_dir(const std::filesystem::path& data_dir, NlgConfig cfg,
                     const std::optional<std::filesystem::path>& out, std::ostream* log,
                     std::size_t log_every = 10);

NlgEval eval_nlg_dir(const std::filesystem::path& checkpoint, const std::filesystem::path& dialogues);

struct FaceRun {
  std::vector<StepMetrics> history;
  FaceOverfitReport report;
};

/// Trains on <data>/faces and saves a checkpoint when out is set.
FaceRun train_face_dir(const std::filesystem::path& data_dir, const FaceGanConfig& cfg,
                       const std::optional<std::filesystem::path>& out, std::ostream* log,
                       std::size_t log_every = 100);

/// Terminal chat: one user line per turn, prints "[emotion] text" per reply
/// and writes turn_NNN.png into dump_dir when set. Lines starting with
/// "/emotion <name>" or "/au <json object>" set an override for the next turn.
void chat_loop(Pipeline& pipeline, const std::string& face_id, std::istream& in, std::ostream& out,
               const std::optional<std::filesystem::path>& dump_dir, bool prompt);

}  // namespace emoface::cli
