// SPDX-License-Identifier: Apache-2.0
#include <algorithm>

#include "doctest.h"
#include "emoface/au_bridge.hpp"

using namespace emoface;
using json = nlohmann::json;

namespace {

std::size_t au(const char* name) { return *au_index(name); }

}  // namespace

TEST_CASE("default table is valid and has one row per emotion") {
  const auto src = default_au_table_source();
  CHECK(validate_table(src).empty());
  CHECK(src.rows.size() == kEmotionCount);
  const AuTable table = AuTable::defaults();
  CHECK(table.to_json().size() == kEmotionCount);
}

TEST_CASE("happiness activates exactly AU06 and AU12") {
  const AuVector v = map_emotion_to_au(Emotion::happiness, AuTable::defaults());
  for (std::size_t a = 0; a < kAuCount; ++a)
    CHECK(v[a] == ((a == au("AU06") || a == au("AU12")) ? 1.0 : 0.0));
}

TEST_CASE("neutral is the zero vector and non_neutral maps like neutral") {
  const AuTable table = AuTable::defaults();
  const AuVector zero{};
  CHECK(map_emotion_to_au(Emotion::neutral, table) == zero);
  CHECK(map_emotion_to_au(Emotion::non_neutral, table) == map_emotion_to_au(Emotion::neutral, table));
}

TEST_CASE("every mapped vector lies in the unit cube") {
  const AuTable table = AuTable::defaults();
  for (std::size_t e = 0; e < kEmotionCount; ++e)
    for (double v : map_emotion_to_au(static_cast<Emotion>(e), table)) CHECK((v >= 0.0 && v <= 1.0));
}

TEST_CASE("validation names each violation") {
  json j = json::object();
  for (const auto& name : kEmotionNames) j[std::string(name)] = json::object();
  j["anger"]["AU04"] = 1.2;
  auto problems = validate_table(AuTableSource::from_json(j));
  REQUIRE(problems.size() == 1);
  CHECK(problems[0].find("anger") != std::string::npos);
  CHECK(problems[0].find("AU04") != std::string::npos);
  CHECK_THROWS_AS(AuTable(AuTableSource::from_json(j)), std::invalid_argument);

  j["anger"] = json::object();
  j["neutral"]["AU12"] = 0.5;
  j["sadness"]["AU99"] = 1.0;
  j["fear"]["AU01"] = "high";
  j.erase("surprise");
  j["joy"] = json::object();
  problems = validate_table(AuTableSource::from_json(j));
  CHECK(problems.size() == 5);

  json arr = json::object();
  for (const auto& name : kEmotionNames) arr[std::string(name)] = std::vector<double>(kAuCount, 0.0);
  CHECK(validate_table(AuTableSource::from_json(arr)).empty());
  arr["fear"] = std::vector<double>(7, 0.0);
  CHECK(validate_table(AuTableSource::from_json(arr)).size() == 1);
}

TEST_CASE("a 7-row table is rejected") {
  json j = AuTable::defaults().to_json();
  j.erase("non_neutral");
  const auto problems = validate_table(AuTableSource::from_json(j));
  REQUIRE(problems.size() == 1);
  CHECK(problems[0].find("non_neutral") != std::string::npos);
}

TEST_CASE("mapping is a pure lookup returning copies") {
  const AuTable table = AuTable::defaults();
  AuVector first = map_emotion_to_au(Emotion::anger, table);
  const AuVector again = map_emotion_to_au(Emotion::anger, table);
  CHECK(first == again);
  first[0] = 0.77;
  CHECK(map_emotion_to_au(Emotion::anger, table) == again);
}

TEST_CASE("table JSON round trip") {
  const AuTable table = AuTable::defaults();
  const AuTable back{AuTableSource::from_json(table.to_json())};
  for (std::size_t e = 0; e < kEmotionCount; ++e)
    CHECK(back.row(static_cast<Emotion>(e)) == table.row(static_cast<Emotion>(e)));
}

TEST_CASE("AU override objects") {
  const AuVector v = parse_au_object(json{{"AU12_r", 0.4}, {"AU06", 1.0}});
  CHECK(v[au("AU12")] == 0.4);
  CHECK(v[au("AU06")] == 1.0);
  CHECK(std::count(v.begin(), v.end(), 0.0) == static_cast<long>(kAuCount - 2));
  CHECK(parse_au_object(au_to_json(v)) == v);
  CHECK_THROWS_AS(parse_au_object(json{{"AU12", 1.5}}), std::invalid_argument);
  CHECK_THROWS_AS(parse_au_object(json{{"AU12", -0.1}}), std::invalid_argument);
  CHECK_THROWS_AS(parse_au_object(json{{"AU03", 0.5}}), std::invalid_argument);
  CHECK_THROWS_AS(parse_au_object(json::array()), std::invalid_argument);
  CHECK(validate_au_vector(std::vector<double>(3, 0.0)).size() == 1);
}
