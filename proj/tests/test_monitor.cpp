#include <random>

#include "doctest.h"
#include "sboxsim/fixture.hpp"
#include "sboxsim/monitor.hpp"

using namespace sboxsim;

namespace {

// The fixture's listing-style policy plus the bookkeeping syscalls the
// descriptor and sync tests need.
const char* kWidePolicy =
    "SYS_NUM ACTION\n"
    "0 0\n"
    "1 0\n"
    "2 0\n"
    "3 0\n"
    "9 0\n"
    "41 0\n"
    "42 5\n"
    "43 3\n"
    "202 0\n";

Monitor make_monitor(EnclaveId origin, const char* text = kWidePolicy) {
  Monitor mon;
  REQUIRE_FALSE(mon.load_policy_text(text).has_value());
  mon.register_channel(origin);
  return mon;
}

SyscallRequest open_req(EnclaveId origin, std::string path) {
  SyscallRequest req;
  req.origin = origin;
  req.sysno = sysno::kOpen;
  req.args.path = std::move(path);
  return req;
}

SyscallRequest read_req(EnclaveId origin, std::uint64_t len) {
  SyscallRequest req;
  req.origin = origin;
  req.sysno = sysno::kRead;
  req.args.len = len;
  return req;
}

}  // namespace

TEST_SUITE("monitor") {

TEST_CASE("the listing-style policy parses exactly") {
  auto result = load_policy(kFixturePolicyText);
  REQUIRE(std::holds_alternative<Policy>(result));
  const Policy& p = std::get<Policy>(result);

  REQUIRE(p.actions.size() == 5);
  CHECK(p.actions.at(0) == ActionCode::Allow);
  CHECK(p.actions.at(1) == ActionCode::Notify);
  CHECK(p.actions.at(2) == ActionCode::Log);
  CHECK(p.actions.at(42) == ActionCode::Kill);
  CHECK(p.actions.at(43) == ActionCode::Trap);

  REQUIRE(p.rules.size() == 3);
  CHECK(p.rules[0].kind == ListKind::Blacklist);
  CHECK(p.rules[0].sysno == 0);
  CHECK(p.rules[0].pattern == "/path/to/top/secret*");
  CHECK_FALSE(p.rules[0].is_cidr);
  CHECK(p.rules[1].kind == ListKind::Whitelist);
  CHECK(p.rules[1].sysno == 2);
  CHECK(p.rules[2].kind == ListKind::Blacklist);
  CHECK(p.rules[2].sysno == 43);
  CHECK(p.rules[2].is_cidr);
  CHECK(p.rules[2].cidr_addr == ((112u << 24) | (233u << 16)));
  CHECK(p.rules[2].cidr_prefix == 16);
}

TEST_CASE("malformed policies are rejected with a line and reason") {
  auto expect_error = [](const std::string& text, std::size_t line) {
    auto result = load_policy(text);
    REQUIRE(std::holds_alternative<PolicyParseError>(result));
    const auto& err = std::get<PolicyParseError>(result);
    CHECK(err.line == line);
    CHECK_FALSE(err.reason.empty());
  };
  expect_error("SYS_NUM ACTION\n7 4\n", 2);                      // action 4
  expect_error("SYS_NUM ACTION\n0 0\nBLACKLIST 43 \"1.2.3.4/33\"\n", 3);
  expect_error("SYS_NUM ACTION\nBLACKLIST 43 \"1.2.333.4/16\"\n", 2);
  expect_error("SYS_NUM ACTION\nBLACKLIST 2 /no/quotes\n", 2);
  expect_error("SYS_NUM ACTION\nBLACKLIST nonsense \"x\"\n", 2);
  expect_error("SYS_NUM ACTION\n0 0 trailing\n", 2);
}

TEST_CASE("anything a policy does not name is denied") {
  auto result = load_policy("");
  REQUIRE(std::holds_alternative<Policy>(result));
  const Policy& empty = std::get<Policy>(result);
  SyscallRequest req = read_req(1, 64);
  Verdict v = filter_syscall(req, empty);
  CHECK(v.kind == VerdictKind::Denied);
  CHECK_FALSE(v.rule_index.has_value());
}

TEST_CASE("worked verdicts against the listing-style policy") {
  const Policy policy =
      std::get<Policy>(load_policy(kFixturePolicyText));

  SyscallRequest read_tmp = read_req(1, 32);
  read_tmp.args.path = "/tmp/a";
  CHECK(filter_syscall(read_tmp, policy).kind == VerdictKind::Execute);

  SyscallRequest read_secret = read_req(1, 32);
  read_secret.args.path = "/path/to/top/secret-keys.pem";
  Verdict denied = filter_syscall(read_secret, policy);
  CHECK(denied.kind == VerdictKind::Denied);
  REQUIRE(denied.rule_index.has_value());
  CHECK(*denied.rule_index == 0);
  CHECK(denied.detail == "DeniedByRule");

  SyscallRequest connect;
  connect.origin = 1;
  connect.sysno = sysno::kConnect;
  CHECK(filter_syscall(connect, policy).kind == VerdictKind::Kill);

  SyscallRequest accept_bad;
  accept_bad.origin = 1;
  accept_bad.sysno = sysno::kAccept;
  accept_bad.args.ipv4 = *parse_ipv4("112.233.9.9");
  Verdict cidr = filter_syscall(accept_bad, policy);
  CHECK(cidr.kind == VerdictKind::Denied);
  REQUIRE(cidr.rule_index.has_value());
  CHECK(*cidr.rule_index == 2);

  SyscallRequest accept_ok = accept_bad;
  accept_ok.args.ipv4 = *parse_ipv4("10.0.0.1");
  CHECK(filter_syscall(accept_ok, policy).kind == VerdictKind::Trap);

  Verdict open_ok =
      filter_syscall(open_req(1, "/path/to/no/secret/abc.txt"), policy);
  CHECK(open_ok.kind == VerdictKind::ExecuteLog);
  REQUIRE(open_ok.rule_index.has_value());
  CHECK(*open_ok.rule_index == 1);

  // The whitelist is exclusive: a path outside it is denied.
  CHECK(filter_syscall(open_req(1, "/etc/passwd"), policy).kind ==
        VerdictKind::Denied);
}

TEST_CASE("bracket globs match a run of class characters") {
  const std::string cls = "/data/[a-z0-9\\.]";
  CHECK(glob_match(cls, "/data/abc.txt"));
  CHECK(glob_match(cls, "/data/x"));
  CHECK_FALSE(glob_match(cls, "/data/ABC"));
  CHECK_FALSE(glob_match(cls, "/data/"));
  CHECK(glob_match("/a/*", "/a/anything/below"));
  CHECK_FALSE(glob_match("/a/*", "/b/c"));
}

TEST_CASE("digest queries are uniform across interfaces") {
  Monitor mon;
  CHECK(std::get<MonitorErr>(mon.digest_query_os()) ==
        MonitorErr::NoPolicyLoaded);
  REQUIRE_FALSE(mon.load_policy_text(kFixturePolicyText).has_value());
  CHECK(std::get<MonitorErr>(mon.digest_query_enclave(7)) ==
        MonitorErr::NoChannel);
  mon.register_channel(7);
  Digest os_view = std::get<Digest>(mon.digest_query_os());
  Digest enclave_view = std::get<Digest>(mon.digest_query_enclave(7));
  CHECK(os_view == enclave_view);
  CHECK(os_view == mon.policy().digest);
}

TEST_CASE("read and write returns are bounded by the request length") {
  FdTable fds;
  auto no_va = [](EnclaveId, std::uint64_t) { return false; };
  const std::int64_t len = 100;
  for (std::int64_t raw = -2; raw <= len + 2; ++raw) {
    ReturnCheck check = validate_return(read_req(1, 100), raw, fds, no_va);
    const bool violation = std::holds_alternative<IagoViolation>(check);
    CHECK(violation == (raw < -1 || raw > len));
    if (violation) {
      CHECK(std::get<IagoViolation>(check).kind == IagoKind::RangeViolation);
    }
  }
}

TEST_CASE("descriptors are virtualized and reuse is flagged") {
  Monitor mon = make_monitor(1);
  ScriptedKernel kernel;

  SyscallOutcome first = mon.handle(open_req(1, "/tmp/x"), kernel);
  REQUIRE(first.ret.has_value());
  const std::uint64_t handle =
      static_cast<std::uint64_t>(first.ret->value);
  const FdRecord* rec = mon.fd_table().resolve(1, handle);
  REQUIRE(rec);
  // The kernel's fd number never equals the virtual handle it hides behind.
  CHECK(rec->kernel_fd != static_cast<std::int64_t>(handle));

  // A hostile kernel answers a second open with the same live descriptor.
  kernel.script(sysno::kOpen, rec->kernel_fd);
  SyscallOutcome reused = mon.handle(open_req(1, "/tmp/y"), kernel);
  REQUIRE(reused.iago.has_value());
  CHECK(reused.iago->kind == IagoKind::UnknownDescriptor);
  CHECK_FALSE(reused.ret.has_value());
}

TEST_CASE("foreign and stale handles never reach the kernel") {
  Monitor mon = make_monitor(1);
  mon.register_channel(2);
  ScriptedKernel kernel;
  SyscallOutcome opened = mon.handle(open_req(1, "/tmp/x"), kernel);
  REQUIRE(opened.ret.has_value());
  const std::uint64_t handle = static_cast<std::uint64_t>(opened.ret->value);

  // Another enclave replays the handle value.
  SyscallRequest foreign = read_req(2, 16);
  foreign.args.fd_handle = handle;
  SyscallOutcome stolen = mon.handle(foreign, kernel);
  CHECK(stolen.verdict.kind == VerdictKind::Denied);
  REQUIRE(stolen.iago.has_value());
  CHECK(stolen.iago->kind == IagoKind::UnknownDescriptor);
  CHECK_FALSE(stolen.executed);

  // The owner closes it; the value goes stale for everyone.
  SyscallRequest close;
  close.origin = 1;
  close.sysno = sysno::kClose;
  close.args.fd_handle = handle;
  SyscallOutcome closed = mon.handle(close, kernel);
  CHECK(closed.ret.has_value());
  SyscallRequest stale = read_req(1, 16);
  stale.args.fd_handle = handle;
  SyscallOutcome after = mon.handle(stale, kernel);
  REQUIRE(after.iago.has_value());
  CHECK(after.iago->kind == IagoKind::UnknownDescriptor);
}

TEST_CASE("sync objects must live in private enclave memory") {
  Monitor mon = make_monitor(1);
  mon.set_va_oracle([](EnclaveId, std::uint64_t va) { return va < 16; });
  ScriptedKernel kernel;
  SyscallRequest futex;
  futex.origin = 1;
  futex.sysno = sysno::kFutex;
  futex.args.addr_va = 8;
  CHECK(mon.handle(futex, kernel).ret.has_value());
  futex.args.addr_va = 40;  // shared, OS-visible memory
  SyscallOutcome out = mon.handle(futex, kernel);
  REQUIRE(out.iago.has_value());
  CHECK(out.iago->kind == IagoKind::SharedSyncObject);
}

TEST_CASE("pointer-bearing returns are suppressed") {
  Monitor mon = make_monitor(1);
  ScriptedKernel kernel;
  SyscallRequest mmap;
  mmap.origin = 1;
  mmap.sysno = sysno::kMmap;
  SyscallOutcome out = mon.handle(mmap, kernel);
  CHECK(out.executed);
  CHECK_FALSE(out.ret.has_value());
  REQUIRE(out.iago.has_value());
  CHECK(out.iago->kind == IagoKind::RawPointerLeak);
}

TEST_CASE("kill verdicts terminate the origin for good") {
  Monitor mon = make_monitor(1);
  ScriptedKernel kernel;
  SyscallRequest connect;
  connect.origin = 1;
  connect.sysno = sysno::kConnect;
  CHECK(mon.handle(connect, kernel).verdict.kind == VerdictKind::Kill);
  CHECK(mon.is_terminated(1));
  SyscallOutcome after = mon.handle(read_req(1, 8), kernel);
  CHECK(after.verdict.kind == VerdictKind::Denied);
  CHECK(after.verdict.detail == "terminated");
}

TEST_CASE("trap verdicts reach the registered hook") {
  Monitor mon = make_monitor(1);
  std::vector<std::uint64_t> trapped;
  mon.set_trap_hook([&trapped](const SyscallRequest& req) {
    trapped.push_back(req.sysno);
  });
  ScriptedKernel kernel;
  SyscallRequest accept;
  accept.origin = 1;
  accept.sysno = sysno::kAccept;
  accept.args.ipv4 = *parse_ipv4("10.1.2.3");
  CHECK(mon.handle(accept, kernel).verdict.kind == VerdictKind::Trap);
  CHECK(trapped == std::vector<std::uint64_t>{sysno::kAccept});
}

TEST_CASE("accounting chains every executed request") {
  Monitor mon = make_monitor(1);
  ScriptedKernel kernel;
  for (int i = 0; i < 3; ++i) {
    REQUIRE(mon.handle(read_req(1, 1024), kernel).ret.has_value());
  }
  const AccountingLog& log = mon.accounting();
  REQUIRE(log.entries().size() == 3);
  CHECK_FALSE(log.verify_chain().has_value());
  CHECK(log.totals() == ResourceDelta{.file_read = 3072});

  // Independent recomputation of the chain from scratch.
  Digest prev{};
  for (const LogEntry& e : log.entries()) {
    CHECK(e.prev_hash == prev);
    CHECK(e.entry_hash == AccountingLog::entry_digest(e));
    prev = e.entry_hash;
  }

  // Tampering with a committed entry breaks the chain at that index.
  mon.accounting().entry_mut(1).delta.file_read = 1;
  auto broken = mon.accounting().verify_chain();
  REQUIRE(broken.has_value());
  CHECK(*broken == 1);
}

TEST_CASE("sealed exports round-trip under the monitor key") {
  Monitor mon = make_monitor(1);
  ScriptedKernel kernel;
  REQUIRE(mon.handle(read_req(1, 512), kernel).ret.has_value());
  crypto::AeadKey key{};
  key.fill(0x31);
  crypto::Sealed sealed = mon.accounting().sealed_export(key);
  std::vector<std::uint8_t> plain;
  // The nonce convention for exports is all-zero (single-shot key).
  REQUIRE(crypto::aead_open(key, crypto::AeadNonce{}, sealed, plain));
  const std::string text = mon.accounting().export_jsonl();
  CHECK(std::string(plain.begin(), plain.end()) == text);
  sealed.ciphertext[0] ^= 1;
  CHECK_FALSE(crypto::aead_open(key, crypto::AeadNonce{}, sealed, plain));
}

TEST_CASE("policies survive a render and reload round trip") {
  std::mt19937_64 rng(0xF00D);
  const char* patterns[] = {"/a/*", "/var/log/[a-z0-9\\.]", "/x",
                            "10.0.0.0/8", "192.168.1.0/24", "*"};
  const std::uint64_t action_codes[] = {0, 1, 2, 3, 5};
  for (int trial = 0; trial < 200; ++trial) {
    Policy p;
    const std::size_t n_actions = rng() % 6;
    for (std::size_t i = 0; i < n_actions; ++i) {
      const std::uint64_t code = action_codes[rng() % 5];
      p.actions[rng() % 300] = static_cast<ActionCode>(code);
    }
    const std::size_t n_rules = rng() % 4;
    for (std::size_t i = 0; i < n_rules; ++i) {
      Rule r;
      r.kind = rng() % 2 ? ListKind::Blacklist : ListKind::Whitelist;
      r.sysno = rng() % 300;
      r.pattern = patterns[rng() % 6];
      // Patterns shaped like a.b.c.d/len reload as CIDR rules.
      if (r.pattern[0] >= '0' && r.pattern[0] <= '9') {
        auto cut = r.pattern.find('/');
        r.is_cidr = true;
        r.cidr_addr = *parse_ipv4(r.pattern.substr(0, cut));
        r.cidr_prefix =
            static_cast<std::uint8_t>(std::stoi(r.pattern.substr(cut + 1)));
      }
      p.rules.push_back(std::move(r));
    }
    auto reloaded = load_policy(render_policy(p));
    REQUIRE(std::holds_alternative<Policy>(reloaded));
    CHECK(semantically_equal(p, std::get<Policy>(reloaded)));
  }
}

TEST_CASE("the fixture monitor mediates for the victim only") {
  Fixture fx = make_default_fixture();
  CHECK(fx.monitor_sw.has_channel(fx.victim));
  CHECK_FALSE(fx.monitor_sw.has_channel(fx.attacker));
  SyscallOutcome out = fx.monitor_sw.handle(read_req(fx.victim, 8), fx.kernel);
  CHECK(out.ret.has_value());
  SyscallOutcome refused =
      fx.monitor_sw.handle(read_req(fx.attacker, 8), fx.kernel);
  CHECK(refused.verdict.kind == VerdictKind::Denied);
}

}  // TEST_SUITE
