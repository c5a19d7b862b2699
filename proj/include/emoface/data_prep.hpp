// SPDX-License-Identifier: Apache-2.0
// Dialogue and face corpus ingestion, label alignment, vocabulary, splits.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace emoface {

enum class Emotion : int {
  anger = 0,
  disgust,
  fear,
  happiness,
  sadness,
  surprise,
  neutral,
  non_neutral,
};
inline constexpr std::size_t kEmotionCount = 8;
inline constexpr std::array<std::string_view, kEmotionCount> kEmotionNames{
    "anger", "disgust", "fear", "happiness", "sadness", "surprise", "neutral", "non_neutral"};

enum class Expression : int {
  sad = 0,
  neutral,
  angry,
  contemptuous,
  disgusted,
  surprised,
  fearful,
  happy,
};
inline constexpr std::size_t kExpressionCount = 8;
inline constexpr std::array<std::string_view, kExpressionCount> kExpressionNames{
    "sad", "neutral", "angry", "contemptuous", "disgusted", "surprised", "fearful", "happy"};

inline constexpr std::size_t kAuCount = 17;
inline constexpr std::array<std::string_view, kAuCount> kAuNames{
    "AU01", "AU02", "AU04", "AU05", "AU06", "AU07", "AU09", "AU10", "AU12",
    "AU14", "AU15", "AU17", "AU20", "AU23", "AU25", "AU26", "AU45"};

/// Index of "AU12" style names (an "_r" suffix is accepted).
std::optional<std::size_t> au_index(std::string_view name);

std::string_view to_string(Emotion e);
std::string_view to_string(Expression e);
/// Throws LabelError for names outside the 8-member sets.
Emotion parse_emotion(std::string_view name);
Expression parse_expression(std::string_view name);

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ParseError : DataError {
  ParseError(const std::string& file, std::size_t line, const std::string& what);
  std::size_t line;
};
struct LabelError : DataError {
  using DataError::DataError;
};
struct JoinError : DataError {
  using DataError::DataError;
};

/// Lowercase, split on whitespace, detach ASCII punctuation as tokens.
std::vector<std::string> tokenize(std::string_view text);
std::string detokenize(const std::vector<std::string>& words);

struct DialogueTurn {
  std::string speaker_id;
  std::string text;
  std::vector<std::string> words;    // tokenized text
  std::vector<std::int64_t> tokens;  // ids, filled by Vocabulary::encode_turns
  Emotion emotion = Emotion::neutral;
};

struct Dialogue {
  std::string id;
  std::vector<DialogueTurn> turns;
};

/// JSONL, one {"dialogue_id", "turns": [{"speaker", "text", "emotion"}]} per line.
std::vector<Dialogue> load_dialogues(const std::filesystem::path& path);
void write_dialogues(const std::filesystem::path& path, const std::vector<Dialogue>& dialogues);

class Vocabulary {
 public:
  static constexpr std::int64_t pad = 0;
  static constexpr std::int64_t bos = 1;
  static constexpr std::int64_t eos = 2;
  static constexpr std::int64_t unk = 3;
  static constexpr std::int64_t reserved = 4;

  Vocabulary();
  /// Reserved entries followed by tokens in the given order.
  Vocabulary(const std::vector<std::string>& tokens, int min_freq);

  std::size_t size() const { return tokens_.size(); }
  int min_freq() const { return min_freq_; }
  std::int64_t id(const std::string& token) const;
  const std::string& token(std::int64_t id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<std::int64_t> encode(const std::vector<std::string>& words) const;
  /// Drops pad, bos and eos; unknown ids decode to "<unk>".
  std::vector<std::string> decode(const std::vector<std::int64_t>& ids) const;
  void encode_turns(std::vector<Dialogue>& dialogues) const;

  /// One token per line, reserved entries included.
  std::string serialize() const;
  static Vocabulary deserialize(const std::string& text, int min_freq = 1);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, std::int64_t> ids_;
  int min_freq_ = 1;
};

/// Frequency descending, ties lexicographic; throws DataError on an empty corpus.
Vocabulary build_vocab(const std::vector<Dialogue>& dialogues, int min_freq = 2);

struct FaceRecord {
  std::string image_path;
  std::string model_id;
  Expression expression = Expression::neutral;
  std::string gaze;
  std::string camera_angle;
  std::array<double, kAuCount> au{};
};

struct FaceFilter {
  bool frontal_only = true;  // camera angle and gaze both frontal
};

bool is_frontal(const FaceRecord& r);

/// Joins the index CSV with the AU CSV on face_id, which may equal the image
/// path or its file stem. Intensities are divided by 5 and clipped to [0,1].
/// Records come back sorted by image_path.
std::vector<FaceRecord> load_face_corpus(const std::filesystem::path& index_path,
                                         const std::filesystem::path& au_csv_path,
                                         FaceFilter filter = {});
void write_face_corpus(const std::filesystem::path& index_path,
                       const std::filesystem::path& au_csv_path,
                       const std::vector<FaceRecord>& records);

enum class NonNeutralPolicy { neutral, contemptuous, drop };

std::optional<NonNeutralPolicy> parse_non_neutral_policy(std::string_view name);

/// Dialogue label to face expression; nullopt only under the drop policy.
std::optional<Expression> align_labels(Emotion e, NonNeutralPolicy policy);
inline Expression align_labels(Emotion e) { return *align_labels(e, NonNeutralPolicy::neutral); }

struct Example {
  std::vector<DialogueTurn> context;  // up to context_turns preceding turns
  DialogueTurn target;
};

struct SplitOptions {
  std::array<double, 3> ratios{0.8, 0.1, 0.1};  // train, valid, test
  std::uint64_t seed = 0;
  std::size_t context_turns = 3;
  NonNeutralPolicy non_neutral = NonNeutralPolicy::neutral;
};

struct DataSplit {
  std::vector<Dialogue> dialogues;
  std::vector<Example> examples;
  std::vector<FaceRecord> faces;
};

struct Splits {
  DataSplit train, valid, test;
};

/// Every turn after the first becomes a target with its preceding turns as
/// context; under the drop policy non_neutral targets are skipped.
std::vector<Example> make_examples(const std::vector<Dialogue>& dialogues,
                                   std::size_t context_turns, NonNeutralPolicy policy);

/// Groups by dialogue and by face model_id. Valid and test sizes are
/// floor(ratio * groups), the remainder goes to train. Throws DataError when
/// any split would be empty.
Splits make_splits(const std::vector<Dialogue>& dialogues, const std::vector<FaceRecord>& faces,
                   const SplitOptions& options);

}  // namespace emoface
