// SPDX-License-Identifier: Apache-2.0
#include "emoface/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <tuple>

#include "emoface/image_io.hpp"

namespace emoface::synthetic {

namespace {

using Rgb = std::array<double, 3>;

constexpr std::array<Rgb, 6> kSkin{{{0.96, 0.80, 0.69},
                                    {0.87, 0.68, 0.53},
                                    {0.76, 0.57, 0.42},
                                    {0.61, 0.43, 0.30},
                                    {0.45, 0.31, 0.22},
                                    {0.93, 0.75, 0.62}}};
constexpr std::array<Rgb, 5> kHair{{{0.10, 0.07, 0.05},
                                    {0.35, 0.22, 0.12},
                                    {0.72, 0.55, 0.30},
                                    {0.55, 0.20, 0.08},
                                    {0.55, 0.55, 0.55}}};
constexpr std::array<Rgb, 4> kBackground{{{0.55, 0.70, 0.85},
                                          {0.80, 0.85, 0.75},
                                          {0.85, 0.78, 0.88},
                                          {0.70, 0.72, 0.74}}};

double coverage(double signed_dist, double pixel) {
  // Linear ramp one pixel wide around the boundary.
  return std::clamp(0.5 - signed_dist / pixel, 0.0, 1.0);
}

double ellipse_dist(double x, double y, double cx, double cy, double rx, double ry) {
  const double dx = (x - cx) / rx, dy = (y - cy) / ry;
  return (std::sqrt(dx * dx + dy * dy) - 1.0) * std::min(rx, ry);
}

double segment_dist(double x, double y, double ax, double ay, double bx, double by) {
  const double vx = bx - ax, vy = by - ay;
  const double t = std::clamp(((x - ax) * vx + (y - ay) * vy) / (vx * vx + vy * vy), 0.0, 1.0);
  const double px = ax + t * vx - x, py = ay + t * vy - y;
  return std::sqrt(px * px + py * py);
}

void blend(Rgb& dst, const Rgb& src, double alpha) {
  for (int c = 0; c < 3; ++c) dst[c] = dst[c] * (1.0 - alpha) + src[c] * alpha;
}

double au(const AuVector& v, const char* name) { return v[*au_index(name)]; }

}  // namespace

FaceIdentity make_identity(std::size_t index) {
  std::mt19937_64 rng(1000 + index);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  FaceIdentity f;
  f.skin = kSkin[index % kSkin.size()];
  f.hair = kHair[(index * 3 + 1) % kHair.size()];
  f.background = kBackground[(index * 5 + 2) % kBackground.size()];
  f.iris = index % 2 ? Rgb{0.25, 0.40, 0.55} : Rgb{0.30, 0.20, 0.12};
  f.face_rx = 0.29 + 0.03 * u(rng);
  f.face_ry = 0.36 + 0.02 * u(rng);
  f.eye_dx = 0.13 + 0.015 * u(rng);
  f.eye_y = 0.47 + 0.015 * u(rng);
  f.mouth_y = 0.73 + 0.015 * u(rng);
  f.mouth_half_width = 0.12 + 0.015 * u(rng);
  return f;
}

Tensor render_face(const FaceIdentity& who, const AuVector& aus, std::size_t size) {
  const double pixel = 1.0 / static_cast<double>(size);
  const double raise = 0.5 * (au(aus, "AU01") + au(aus, "AU02"));
  const double lower = au(aus, "AU04");
  const double inner_tilt = au(aus, "AU04") - au(aus, "AU01");
  const double curve = au(aus, "AU12") - au(aus, "AU15");
  const double open = au(aus, "AU26");
  const double eye_ry = 0.035 * (1.0 + 0.5 * au(aus, "AU05"));

  const double cx = 0.5, cy = 0.56;
  const double brow_y = who.eye_y - 0.075 - 0.055 * raise + 0.035 * lower;
  const Rgb lip{0.62, 0.22, 0.22};
  const Rgb mouth_inside{0.25, 0.05, 0.06};
  const Rgb white{0.97, 0.97, 0.97};
  const Rgb pupil{0.05, 0.05, 0.05};
  const Rgb brow{who.hair[0] * 0.55, who.hair[1] * 0.55, who.hair[2] * 0.55};

  Tensor img(Shape{3, size, size});
  for (std::size_t py = 0; py < size; ++py) {
    for (std::size_t px = 0; px < size; ++px) {
      const double x = (static_cast<double>(px) + 0.5) * pixel;
      const double y = (static_cast<double>(py) + 0.5) * pixel;
      Rgb c = who.background;
      for (auto& v : c) v *= 0.9 + 0.1 * (1.0 - y);

      blend(c, who.hair, coverage(ellipse_dist(x, y, cx, cy - 0.08, who.face_rx + 0.04, who.face_ry), pixel));
      blend(c, who.skin, coverage(ellipse_dist(x, y, cx, cy, who.face_rx, who.face_ry), pixel));

      for (int side : {-1, 1}) {
        const double ex = cx + side * who.eye_dx;
        blend(c, white, coverage(ellipse_dist(x, y, ex, who.eye_y, 0.055, eye_ry), pixel));
        blend(c, who.iris, coverage(ellipse_dist(x, y, ex, who.eye_y, 0.024, std::min(0.024, eye_ry)), pixel));
        blend(c, pupil, coverage(ellipse_dist(x, y, ex, who.eye_y, 0.011, 0.011), pixel));

        const double inner_x = cx + side * 0.05, outer_x = cx + side * (who.eye_dx + 0.07);
        const double d = segment_dist(x, y, inner_x, brow_y + 0.03 * inner_tilt, outer_x, brow_y);
        blend(c, brow, coverage(d - 0.014, pixel));
      }

      const double t = (x - cx) / who.mouth_half_width;
      if (std::fabs(t) <= 1.15) {
        const double bow = 1.0 - std::min(t * t, 1.0);
        const double upper = who.mouth_y - 0.025 * curve + 0.05 * curve * bow;
        const double lower_lip = upper + 0.07 * open * bow;
        if (open > 0.0 && y > upper && y < lower_lip && std::fabs(t) < 1.0)
          blend(c, mouth_inside, std::min(1.0, (lower_lip - y) / pixel) * std::min(1.0, (y - upper) / pixel));
        const double end_fade = coverage((std::fabs(t) - 1.0) * who.mouth_half_width, pixel);
        blend(c, lip, coverage(std::fabs(y - upper) - 0.011, pixel) * end_fade);
        if (open > 0.0) blend(c, lip, coverage(std::fabs(y - lower_lip) - 0.009, pixel) * end_fade);
      }

      for (std::size_t ch = 0; ch < 3; ++ch)
        img[(ch * size + py) * size + px] = std::clamp(c[ch], 0.0, 1.0) * 2.0 - 1.0;
    }
  }
  return img;
}

std::vector<Dialogue> dialogues() {
  struct T {
    const char* speaker;
    const char* text;
    const char* emotion;
  };
  const std::vector<std::vector<T>> raw{
      {{"user", "I finally passed my driving test today!", "happiness"},
       {"agent", "That is wonderful, I am so happy for you!", "happiness"},
       {"user", "Thanks, we should celebrate tonight.", "happiness"}},
      {{"user", "My old dog passed away last night.", "sadness"},
       {"agent", "I am so sorry, that is really sad.", "sadness"},
       {"user", "I miss him already.", "sadness"}},
      {{"user", "Someone scratched my car and drove off.", "anger"},
       {"agent", "That is outrageous, I would be furious!", "anger"},
       {"user", "I am so angry I could scream.", "anger"}},
      {{"user", "I heard strange noises downstairs at midnight.", "fear"},
       {"agent", "That sounds scary, lock the door now.", "fear"},
       {"user", "I am terrified to go and check.", "fear"}},
      {{"user", "Guess who showed up at my door today?", "neutral"},
       {"agent", "No way, really? What a surprise!", "surprise"},
       {"user", "My brother flew in from overseas!", "surprise"}},
      {{"user", "The fridge at work smells like rotten fish.", "disgust"},
       {"agent", "Ugh, that is disgusting, throw it out.", "disgust"},
       {"user", "Gross, nobody wants to touch it.", "disgust"}},
      {{"user", "What time does the meeting start tomorrow?", "neutral"},
       {"agent", "It starts at nine in the main room.", "neutral"},
       {"user", "Okay, I will be there.", "neutral"}},
      {{"user", "So the project got cancelled, or maybe not?", "non_neutral"},
       {"agent", "Well, I honestly do not know what to feel.", "non_neutral"},
       {"user", "Yeah, it is all kind of mixed up.", "non_neutral"}},
      {{"user", "My sister just had a baby girl!", "happiness"},
       {"agent", "Congratulations, that is such great news!", "happiness"},
       {"user", "I am an aunt now, I love it.", "happiness"}},
      {{"user", "The train is late again for the third time.", "anger"},
       {"agent", "Unbelievable, they never fix anything!", "anger"},
       {"user", "Wait, it just arrived early, wow!", "surprise"}},
  };
  std::vector<Dialogue> out;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    Dialogue d;
    char id[32];
    std::snprintf(id, sizeof id, "syn%02zu", i + 1);
    d.id = id;
    for (const auto& t : raw[i]) {
      DialogueTurn turn;
      turn.speaker_id = t.speaker;
      turn.text = t.text;
      turn.words = tokenize(t.text);
      turn.emotion = parse_emotion(t.emotion);
      d.turns.push_back(std::move(turn));
    }
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<Face> faces(std::size_t size) {
  const AuTable table = AuTable::defaults();
  const std::array<std::pair<Emotion, double>, 8> expressive{{{Emotion::happiness, 1.0},
                                                               {Emotion::sadness, 1.0},
                                                               {Emotion::surprise, 1.0},
                                                               {Emotion::anger, 1.0},
                                                               {Emotion::happiness, 0.6},
                                                               {Emotion::sadness, 0.6},
                                                               {Emotion::surprise, 0.6},
                                                               {Emotion::anger, 0.6}}};
  std::vector<Face> out;
  for (std::size_t i = 0; i < 16; ++i) {
    // Identity k appears neutral (image k) and expressive (image k + 8).
    const std::size_t who = i % 8;
    Emotion e = Emotion::neutral;
    double intensity = 0.0;
    if (i >= 8) std::tie(e, intensity) = expressive[i - 8];
    AuVector au = map_emotion_to_au(e, table);
    for (auto& v : au) v *= intensity;
    Face f;
    char model[32];
    std::snprintf(model, sizeof model, "p%02zu", who + 1);
    f.record.model_id = model;
    f.record.expression = align_labels(e);
    f.record.image_path = "images/" + f.record.model_id + "_" + std::string(to_string(f.record.expression)) + ".png";
    f.record.gaze = "frontal";
    f.record.camera_angle = "090";
    f.record.au = au;
    f.image = render_face(make_identity(who), au, size);
    out.push_back(std::move(f));
  }
  return out;
}

void write_corpus(const std::filesystem::path& dir, std::size_t size) {
  std::filesystem::create_directories(dir / "faces" / "images");
  write_dialogues(dir / "dialogues.jsonl", dialogues());
  std::vector<FaceRecord> records;
  for (const auto& f : faces(size)) {
    write_png(dir / "faces" / f.record.image_path, f.image);
    records.push_back(f.record);
  }
  write_face_corpus(dir / "faces" / "index.csv", dir / "faces" / "au.csv", records);
}

}  // namespace emoface::synthetic
