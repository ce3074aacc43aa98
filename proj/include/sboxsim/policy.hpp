#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "sboxsim/types.hpp"

namespace sboxsim {

// Action codes are a closed set; 4 is undefined and rejected at parse time.
enum class ActionCode : std::uint8_t {
  Allow = 0,
  Log = 1,
  Notify = 2,
  Trap = 3,
  Kill = 5,
};

const char* action_code_name(ActionCode a);

enum class ListKind : std::uint8_t { Blacklist, Whitelist };

struct Rule {
  ListKind kind = ListKind::Blacklist;
  std::uint64_t sysno = 0;
  std::string pattern;
  bool is_cidr = false;
  std::uint32_t cidr_addr = 0;
  std::uint8_t cidr_prefix = 0;

  bool operator==(const Rule&) const = default;
};

struct Policy {
  std::map<std::uint64_t, ActionCode> actions;
  std::vector<Rule> rules;
  Digest digest{};  // over the raw policy file bytes
};

// Semantic equality; the digest tracks raw bytes and is excluded.
bool semantically_equal(const Policy& a, const Policy& b);

struct PolicyParseError {
  std::size_t line = 0;
  std::string reason;
};

std::variant<Policy, PolicyParseError> load_policy(const std::string& bytes);

// Canonical text form; load_policy(render_policy(p)) is semantically equal
// to p for every well-formed policy.
std::string render_policy(const Policy& p);

// Suffix-glob with bracket expressions: '*' matches any suffix, '[...]'
// matches one or more characters of the class. No '**'.
bool glob_match(const std::string& pattern, const std::string& text);

bool cidr_contains(std::uint32_t cidr_addr, std::uint8_t prefix,
                   std::uint32_t addr);

std::optional<std::uint32_t> parse_ipv4(const std::string& dotted);

}  // namespace sboxsim
