// SPDX-License-Identifier: Apache-2.0
// Emotion label to Action Unit target lookup.
#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "emoface/data_prep.hpp"
#include "json.hpp"

namespace emoface {

using AuVector = std::array<double, kAuCount>;

/// Table rows exactly as read, before validation. Rows are keyed by emotion
/// name; a row is either an {"AU06": 1.0} object or a 17-element array.
struct AuTableSource {
  struct Row {
    std::vector<double> values;            // length kAuCount when well formed
    std::vector<std::string> unknown_aus;  // keys that are not AU names
    std::vector<std::string> bad_values;   // non-numeric entries
  };
  std::map<std::string, Row> rows;

  static AuTableSource from_json(const nlohmann::json& j);
  static AuTableSource load(const std::filesystem::path& path);
};

/// Empty when the table is usable: all 8 rows, length 17, values in [0,1],
/// neutral row all zero, no unknown emotions or AUs.
std::vector<std::string> validate_table(const AuTableSource& source);

/// Empty when v has kAuCount finite entries in [0,1].
std::vector<std::string> validate_au_vector(const std::vector<double>& v);

/// A validated table; construction throws std::invalid_argument listing
/// every violation.
class AuTable {
 public:
  explicit AuTable(const AuTableSource& source);
  static AuTable defaults();
  static AuTable load(const std::filesystem::path& path);

  const AuVector& row(Emotion e) const { return rows_[static_cast<std::size_t>(e)]; }
  nlohmann::json to_json() const;

 private:
  std::array<AuVector, kEmotionCount> rows_{};
};

AuTableSource default_au_table_source();

/// Pure lookup returning a copy.
AuVector map_emotion_to_au(Emotion e, const AuTable& table);

/// {"AU06": 1.0, ...} with omitted AUs at 0; throws std::invalid_argument
/// on unknown names or values outside [0,1].
AuVector parse_au_object(const nlohmann::json& j);
nlohmann::json au_to_json(const AuVector& v);

}  // namespace emoface
