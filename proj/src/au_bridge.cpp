// SPDX-License-Identifier: Apache-2.0
#include "emoface/au_bridge.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace emoface {

using json = nlohmann::json;

namespace {

std::string fmt(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

}  // namespace

AuTableSource AuTableSource::from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("AU table must be a JSON object");
  AuTableSource src;
  for (const auto& [emotion, value] : j.items()) {
    Row row;
    if (value.is_array()) {
      for (const auto& v : value) {
        if (v.is_number()) {
          row.values.push_back(v.get<double>());
        } else {
          row.bad_values.push_back(v.dump());
          row.values.push_back(0.0);
        }
      }
    } else if (value.is_object()) {
      row.values.assign(kAuCount, 0.0);
      for (const auto& [au, v] : value.items()) {
        const auto idx = au_index(au);
        if (!idx) {
          row.unknown_aus.push_back(au);
        } else if (!v.is_number()) {
          row.bad_values.push_back(au + "=" + v.dump());
        } else {
          row.values[*idx] = v.get<double>();
        }
      }
    } else {
      row.bad_values.push_back(value.dump());
    }
    src.rows.emplace(emotion, std::move(row));
  }
  return src;
}

AuTableSource AuTableSource::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open AU table " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
  return from_json(j);
}

std::vector<std::string> validate_au_vector(const std::vector<double>& v) {
  std::vector<std::string> out;
  if (v.size() != kAuCount) {
    out.push_back("expected " + std::to_string(kAuCount) + " AU values, found " +
                  std::to_string(v.size()));
    return out;
  }
  for (std::size_t a = 0; a < kAuCount; ++a)
    if (!std::isfinite(v[a]) || v[a] < 0.0 || v[a] > 1.0)
      out.push_back(std::string(kAuNames[a]) + " = " + fmt(v[a]) + " outside [0,1]");
  return out;
}

std::vector<std::string> validate_table(const AuTableSource& source) {
  std::vector<std::string> out;
  for (const auto& name : kEmotionNames)
    if (!source.rows.contains(std::string(name))) out.push_back("missing row " + std::string(name));
  for (const auto& [emotion, row] : source.rows) {
    bool known = false;
    for (const auto& name : kEmotionNames) known = known || name == emotion;
    if (!known) out.push_back("unknown emotion row " + emotion);
    for (const auto& au : row.unknown_aus) out.push_back(emotion + ": unknown AU " + au);
    for (const auto& bad : row.bad_values) out.push_back(emotion + ": non-numeric value " + bad);
    for (const auto& v : validate_au_vector(row.values)) out.push_back(emotion + ": " + v);
    if (emotion == "neutral" && row.values.size() == kAuCount) {
      for (std::size_t a = 0; a < kAuCount; ++a)
        if (row.values[a] != 0.0)
          out.push_back("neutral: " + std::string(kAuNames[a]) + " = " + fmt(row.values[a]) +
                        " but the neutral row must be zero");
    }
  }
  return out;
}

AuTable::AuTable(const AuTableSource& source) {
  const auto violations = validate_table(source);
  if (!violations.empty()) {
    std::string msg = "invalid AU table:";
    for (const auto& v : violations) msg += "\n  " + v;
    throw std::invalid_argument(msg);
  }
  for (std::size_t e = 0; e < kEmotionCount; ++e) {
    const auto& values = source.rows.at(std::string(kEmotionNames[e])).values;
    std::copy(values.begin(), values.end(), rows_[e].begin());
  }
}

AuTableSource default_au_table_source() {
  const std::map<std::string, std::vector<std::string>> prototypes{
      {"anger", {"AU04", "AU05", "AU07", "AU23"}},
      {"disgust", {"AU09", "AU15"}},
      {"fear", {"AU01", "AU02", "AU04", "AU05", "AU07", "AU20", "AU26"}},
      {"happiness", {"AU06", "AU12"}},
      {"sadness", {"AU01", "AU04", "AU15"}},
      {"surprise", {"AU01", "AU02", "AU05", "AU26"}},
      {"neutral", {}},
      {"non_neutral", {}},
  };
  AuTableSource src;
  for (const auto& [emotion, aus] : prototypes) {
    AuTableSource::Row row;
    row.values.assign(kAuCount, 0.0);
    for (const auto& au : aus) row.values[*au_index(au)] = 1.0;
    src.rows.emplace(emotion, std::move(row));
  }
  return src;
}

AuTable AuTable::defaults() { return AuTable(default_au_table_source()); }

AuTable AuTable::load(const std::filesystem::path& path) {
  return AuTable(AuTableSource::load(path));
}

json AuTable::to_json() const {
  json j = json::object();
  for (std::size_t e = 0; e < kEmotionCount; ++e) {
    json row = json::object();
    for (std::size_t a = 0; a < kAuCount; ++a)
      if (rows_[e][a] != 0.0) row[std::string(kAuNames[a])] = rows_[e][a];
    j[std::string(kEmotionNames[e])] = row;
  }
  return j;
}

AuVector map_emotion_to_au(Emotion e, const AuTable& table) { return table.row(e); }

AuVector parse_au_object(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("AU vector must be a JSON object of AU names");
  std::vector<double> v(kAuCount, 0.0);
  for (const auto& [au, value] : j.items()) {
    const auto idx = au_index(au);
    if (!idx) throw std::invalid_argument("unknown AU " + au);
    if (!value.is_number()) throw std::invalid_argument(au + " must be a number");
    v[*idx] = value.get<double>();
  }
  const auto problems = validate_au_vector(v);
  if (!problems.empty()) throw std::invalid_argument("invalid AU vector: " + problems.front());
  AuVector out{};
  std::copy(v.begin(), v.end(), out.begin());
  return out;
}

json au_to_json(const AuVector& v) {
  json j = json::object();
  for (std::size_t a = 0; a < kAuCount; ++a) j[std::string(kAuNames[a])] = v[a];
  return j;
}

}  // namespace emoface
