#pragma once

#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "sboxsim/fixture.hpp"

namespace sboxsim {

struct ScenarioError {
  std::string reason;
};

// One scripted attack: machine commands plus the exact defense outcome
// each step must produce. A scenario passes only when every expectation
// holds and the victim's memory is bit-identical afterwards.
struct AttackScenario {
  std::string name;
  int table_row = 0;  // 1..9, the security-analysis table row it exercises
  std::string attacker;
  std::string target;
  std::string expected_defense;
  std::vector<std::string> steps_json;  // one JSON object per step
};

struct StepResult {
  std::string description;
  std::string expected;
  std::string actual;
  bool ok = false;
};

struct AttackReport {
  std::string name;
  int table_row = 0;
  bool blocked = false;
  bool victim_preserved = false;
  std::vector<StepResult> steps;

  bool passed() const { return blocked && victim_preserved; }
};

struct SuiteRow {
  int row = 0;
  std::string description;
  bool blocked = false;
  std::vector<std::string> scenarios;
};

struct SuiteReport {
  std::vector<SuiteRow> rows;  // always 9
  std::vector<AttackReport> reports;

  bool all_blocked() const;
  std::size_t blocked_count() const;
  std::string to_json() const;
  std::string to_table() const;
};

const char* table_row_description(int row);

// Parses a scenario document: either one scenario object or an array.
std::vector<AttackScenario> parse_scenarios(const std::string& json_text);

// The shipped scenario set covering all nine table rows.
const char* default_scenarios_json();

AttackReport run_attack(const AttackScenario& scenario, Fixture& fixture);

using FixtureFactory = std::function<Fixture()>;

SuiteReport full_table_suite(const std::vector<AttackScenario>& scenarios,
                             const FixtureFactory& factory);

// Rows each ablation is predicted to flip; everything else must stay
// blocked when that single check is disabled.
const std::map<std::string, std::set<int>>& ablation_predictions();

AblationFlags ablation_by_name(const std::string& name);

}  // namespace sboxsim
