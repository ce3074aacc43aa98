#include "sboxsim/policy.hpp"

#include <charconv>
#include <regex>
#include <sstream>

#include "sboxsim/crypto.hpp"

namespace sboxsim {

const char* action_code_name(ActionCode a) {
  switch (a) {
    case ActionCode::Allow: return "ALLOW";
    case ActionCode::Log: return "LOG";
    case ActionCode::Notify: return "NOTIFY";
    case ActionCode::Trap: return "TRAP";
    case ActionCode::Kill: return "KILL";
  }
  return "?";
}

bool semantically_equal(const Policy& a, const Policy& b) {
  return a.actions == b.actions && a.rules == b.rules;
}

std::optional<std::uint32_t> parse_ipv4(const std::string& dotted) {
  std::uint32_t addr = 0;
  std::size_t pos = 0;
  for (int octet = 0; octet < 4; ++octet) {
    if (octet > 0) {
      if (pos >= dotted.size() || dotted[pos] != '.') return std::nullopt;
      ++pos;
    }
    std::uint32_t value = 0;
    const char* begin = dotted.data() + pos;
    const char* end = dotted.data() + dotted.size();
    auto [next, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc{} || value > 255) return std::nullopt;
    pos += static_cast<std::size_t>(next - begin);
    addr = (addr << 8) | value;
  }
  return pos == dotted.size() ? std::optional(addr) : std::nullopt;
}

bool cidr_contains(std::uint32_t cidr_addr, std::uint8_t prefix,
                   std::uint32_t addr) {
  if (prefix == 0) return true;
  const std::uint32_t mask = prefix >= 32 ? 0xFFFFFFFFu
                                          : ~((1u << (32 - prefix)) - 1);
  return (cidr_addr & mask) == (addr & mask);
}

bool glob_match(const std::string& pattern, const std::string& text) {
  std::string rx;
  rx.reserve(pattern.size() * 2);
  bool in_class = false;
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    char c = pattern[i];
    if (in_class) {
      if (c == '\\' && i + 1 < pattern.size()) {
        rx.push_back('\\');
        rx.push_back(pattern[++i]);
        continue;
      }
      rx.push_back(c);
      if (c == ']') {
        rx.push_back('+');  // bracket expression covers a run of characters
        in_class = false;
      }
      continue;
    }
    switch (c) {
      case '*': rx += ".*"; break;
      case '[': rx.push_back('['); in_class = true; break;
      case '\\':
        if (i + 1 < pattern.size()) {
          rx.push_back('\\');
          rx.push_back(pattern[++i]);
        }
        break;
      default:
        if (std::string("^$.|?+(){}]").find(c) != std::string::npos) {
          rx.push_back('\\');
        }
        rx.push_back(c);
    }
  }
  try {
    return std::regex_match(text, std::regex(rx));
  } catch (const std::regex_error&) {
    return false;
  }
}

namespace {

// CIDR candidates look like d.d.d.d/len; anything of that shape must parse
// as a valid block or the policy is rejected.
const std::regex kCidrShape(R"(^\d{1,3}\.\d{1,3}\.\d{1,3}\.\d{1,3}/\d+$)");

std::string strip_comment(const std::string& line) {
  auto pos = line.find("//");
  return pos == std::string::npos ? line : line.substr(0, pos);
}

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::variant<Policy, PolicyParseError> load_policy(const std::string& bytes) {
  Policy policy;
  policy.digest = crypto::sha256(
      std::span(reinterpret_cast<const std::uint8_t*>(bytes.data()),
                bytes.size()));

  std::istringstream in(bytes);
  std::string raw;
  std::size_t lineno = 0;
  bool header_seen = false;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (!header_seen && line == "SYS_NUM ACTION") {
      header_seen = true;
      continue;
    }

    std::istringstream fields(line);
    std::string first;
    fields >> first;
    if (first == "BLACKLIST" || first == "WHITELIST") {
      Rule rule;
      rule.kind = first == "BLACKLIST" ? ListKind::Blacklist
                                       : ListKind::Whitelist;
      std::uint64_t sysno = 0;
      if (!(fields >> sysno)) {
        return PolicyParseError{lineno, "rule is missing a syscall number"};
      }
      rule.sysno = sysno;
      std::string rest;
      std::getline(fields, rest);
      rest = trim(rest);
      if (rest.size() < 2 || rest.front() != '"' || rest.back() != '"') {
        return PolicyParseError{lineno, "rule pattern must be quoted"};
      }
      rule.pattern = rest.substr(1, rest.size() - 2);
      if (std::regex_match(rule.pattern, kCidrShape)) {
        auto slash = rule.pattern.find('/');
        auto addr = parse_ipv4(rule.pattern.substr(0, slash));
        int prefix = std::stoi(rule.pattern.substr(slash + 1));
        if (!addr) return PolicyParseError{lineno, "malformed CIDR address"};
        if (prefix < 0 || prefix > 32) {
          return PolicyParseError{lineno, "CIDR prefix length out of range"};
        }
        rule.is_cidr = true;
        rule.cidr_addr = *addr;
        rule.cidr_prefix = static_cast<std::uint8_t>(prefix);
      }
      policy.rules.push_back(std::move(rule));
      continue;
    }

    std::uint64_t sysno = 0;
    std::uint64_t action = 0;
    std::istringstream pair(line);
    if (!(pair >> sysno >> action)) {
      return PolicyParseError{lineno, "expected `sysno action` pair"};
    }
    std::string extra;
    if (pair >> extra) {
      return PolicyParseError{lineno, "trailing tokens after action code"};
    }
    switch (action) {
      case 0: policy.actions[sysno] = ActionCode::Allow; break;
      case 1: policy.actions[sysno] = ActionCode::Log; break;
      case 2: policy.actions[sysno] = ActionCode::Notify; break;
      case 3: policy.actions[sysno] = ActionCode::Trap; break;
      case 5: policy.actions[sysno] = ActionCode::Kill; break;
      default:
        return PolicyParseError{lineno, "unknown action code " +
                                            std::to_string(action)};
    }
  }
  return policy;
}

std::string render_policy(const Policy& p) {
  std::ostringstream out;
  out << "SYS_NUM ACTION\n";
  for (const auto& [sysno, action] : p.actions) {
    out << sysno << " " << static_cast<int>(action) << " // "
        << action_code_name(action) << "\n";
  }
  if (!p.rules.empty()) out << "\n";
  for (const Rule& r : p.rules) {
    out << (r.kind == ListKind::Blacklist ? "BLACKLIST" : "WHITELIST") << " "
        << r.sysno << " \"" << r.pattern << "\"\n";
  }
  return out.str();
}

}  // namespace sboxsim
