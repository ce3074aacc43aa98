#include "sboxsim/attack.hpp"

#include <sstream>

#include "json.hpp"

namespace sboxsim {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

const char* table_row_description(int row) {
  switch (row) {
    case 1: return "read/write/execute: OS -> bi-enclave, monitor";
    case 2: return "read/write/execute: bi-enclave -> peer, monitor";
    case 3: return "read/write/execute: monitor -> bi-enclave";
    case 4: return "read/write/execute: bi-enclave -> outside sandbox";
    case 5: return "transfer control: bi-enclave -> peer, monitor";
    case 6: return "transfer control: bi-enclave -> outside sandbox";
    case 7: return "establish a connection: OS -> bi-enclave, monitor";
    case 8: return "eavesdrop/modify: OS -> shared channel";
    case 9: return "Iago return values: OS -> bi-enclave, monitor";
  }
  return "?";
}

namespace {

bool expect_matches(const std::string& expect, const std::string& actual) {
  // "A|B" accepts either outcome; an empty expectation accepts anything.
  if (expect.empty()) return true;
  std::stringstream ss(expect);
  std::string alt;
  while (std::getline(ss, alt, '|')) {
    if (alt == actual) return true;
  }
  return false;
}

CpuId actor_cpu(const Fixture& fx, const std::string& name) {
  if (name == "attacker") return fx.cpu_attacker;
  if (name == "victim") return fx.cpu_victim;
  if (name == "monitor") return fx.cpu_monitor;
  if (name == "os") return fx.cpu_os;
  throw ScenarioError{"unknown actor: " + name};
}

ProcessId actor_process(const Fixture& fx, const std::string& name) {
  if (name == "attacker") return fx.proc_attacker;
  if (name == "victim") return fx.proc_victim;
  if (name == "monitor") return fx.proc_monitor;
  if (name == "os") return 0;
  throw ScenarioError{"unknown process: " + name};
}

EnclaveId enclave_ref(const Fixture& fx, const std::string& name) {
  if (name == "attacker") return fx.attacker;
  if (name == "victim") return fx.victim;
  if (name == "monitor") return fx.monitor;
  throw ScenarioError{"unknown enclave: " + name};
}

PhysPage page_ref(const Fixture& fx, const json& v) {
  if (v.is_number()) return v.get<PhysPage>();
  auto it = fx.pages.find(v.get<std::string>());
  if (it == fx.pages.end()) {
    throw ScenarioError{"unknown page symbol: " + v.get<std::string>()};
  }
  return it->second;
}

VirtPage va_ref(const Fixture& fx, const json& v) {
  if (v.is_number()) return v.get<VirtPage>();
  auto it = fx.vas.find(v.get<std::string>());
  if (it == fx.vas.end()) {
    throw ScenarioError{"unknown va symbol: " + v.get<std::string>()};
  }
  return it->second;
}

std::uint8_t perms_ref(const std::string& s) {
  std::uint8_t p = 0;
  for (char c : s) {
    if (c == 'r') p |= kPermRead;
    else if (c == 'w') p |= kPermWrite;
    else if (c == 'x') p |= kPermExec;
    else throw ScenarioError{"bad perms: " + s};
  }
  return p;
}

AccessKind kind_ref(const std::string& s) {
  if (s == "read") return AccessKind::Read;
  if (s == "write") return AccessKind::Write;
  if (s == "exec") return AccessKind::Execute;
  throw ScenarioError{"bad access kind: " + s};
}

// Per-scenario interpreter state that is not part of the fixture proper.
struct StepContext {
  // Monitor instance with a policy that also admits mmap/futex, so the
  // return-validation path is reachable for those syscalls.
  std::optional<Monitor> iago_monitor;
  std::optional<std::uint64_t> last_handle;
};

Monitor& iago_monitor(StepContext& ctx, Fixture& fx) {
  if (!ctx.iago_monitor) {
    ctx.iago_monitor.emplace();
    std::string policy = std::string(kFixturePolicyText) +
                         "9        0      // mmap     ALLOW\n"
                         "202      0      // futex    ALLOW\n";
    if (auto err = ctx.iago_monitor->load_policy_text(policy)) {
      throw ScenarioError{"iago policy: " + err->reason};
    }
    ctx.iago_monitor->register_channel(fx.victim);
    Machine& m = *fx.machine;
    ctx.iago_monitor->set_va_oracle([&m](EnclaveId id, std::uint64_t va) {
      const Secs* s = m.find_enclave(id);
      return s && va >= s->elrange_base &&
             va < s->elrange_base + s->elrange_len;
    });
  }
  return *ctx.iago_monitor;
}

std::string run_iago_step(const json& step, Fixture& fx, StepContext& ctx) {
  Monitor& mon = iago_monitor(ctx, fx);
  const std::string kind = step.at("kind");
  SyscallRequest req;
  req.origin = fx.victim;
  if (kind == "range") {
    // Kernel claims more bytes read than the buffer holds.
    req.sysno = sysno::kRead;
    req.args.len = 16;
    fx.kernel.script(sysno::kRead, 21);
  } else if (kind == "descriptor") {
    // Kernel hands back a descriptor value that is already live.
    req.sysno = sysno::kOpen;
    req.args.path = "/path/to/no/secret/data.txt";
    fx.kernel.script(sysno::kOpen, 300);
    fx.kernel.script(sysno::kOpen, 300);
    SyscallOutcome first = mon.handle(req, fx.kernel);
    if (!first.ret) return "setup-open-failed";
  } else if (kind == "sync") {
    // Futex word placed in memory the OS can reach.
    req.sysno = sysno::kFutex;
    req.args.addr_va = kFixtureScratchVa;
  } else if (kind == "pointer") {
    req.sysno = sysno::kMmap;
    req.args.len = 4096;
  } else {
    throw ScenarioError{"unknown iago kind: " + kind};
  }
  SyscallOutcome out = mon.handle(req, fx.kernel);
  if (out.iago) return std::string("Iago:") + iago_kind_name(out.iago->kind);
  if (out.ret) return "Returned";
  return std::string("Verdict:") + verdict_kind_name(out.verdict.kind);
}

StepResult run_step(const json& step, Fixture& fx, StepContext& ctx) {
  StepResult r;
  Machine& m = *fx.machine;
  const std::string op = step.at("op");
  r.expected = step.value("expect", "");
  r.description = op;

  if (op == "os_map") {
    m.os_map_page(actor_process(fx, step.at("process")),
                  va_ref(fx, step.at("va")), page_ref(fx, step.at("page")),
                  perms_ref(step.value("perms", "rw")));
    r.actual = "Mapped";
    r.description = "os_map " + step.at("process").get<std::string>();
    r.ok = expect_matches(r.expected, r.actual);
    return r;
  }
  if (op == "os_unmap") {
    m.os_unmap_page(actor_process(fx, step.at("process")),
                    va_ref(fx, step.at("va")));
    r.actual = "Unmapped";
    r.ok = expect_matches(r.expected, r.actual);
    return r;
  }
  if (op == "access") {
    const std::string actor = step.at("actor");
    const CpuId cpu = actor_cpu(fx, actor);
    const VirtPage va = va_ref(fx, step.at("va"));
    const AccessKind kind = kind_ref(step.at("kind"));
    AccessOutcome o;
    std::array<std::uint8_t, 8> buf;
    buf.fill(0xA5);
    if (kind == AccessKind::Write) {
      o = m.write_bytes(cpu, va, 0, std::span(buf));
    } else if (kind == AccessKind::Read) {
      o = m.read_bytes(cpu, va, 0, std::span(buf));
    } else {
      o = m.translate({cpu, va, kind});
    }
    r.actual = outcome_name(o);
    // A blocked read must observe the abort value, never stale data.
    if (kind == AccessKind::Read && !is_allow(o)) {
      for (std::uint8_t b : buf) {
        if (b != 0xFF) r.actual += "+leak";
      }
    }
    r.description = actor + " " + step.at("kind").get<std::string>() +
                    " va" + std::to_string(va);
    r.ok = expect_matches(r.expected, r.actual);
    return r;
  }
  if (op == "eexit") {
    r.actual = std::string("Isa:") +
               isa_err_name(m.eexit(actor_cpu(fx, step.at("actor"))));
    r.description = step.at("actor").get<std::string>() + " eexit";
    r.ok = expect_matches(r.expected, r.actual);
    return r;
  }
  if (op == "eenter") {
    r.actual = std::string("Isa:") +
               isa_err_name(m.eenter(actor_cpu(fx, step.at("actor")),
                                     enclave_ref(fx, step.at("enclave"))));
    r.description = step.at("actor").get<std::string>() + " eenter " +
                    step.at("enclave").get<std::string>();
    r.ok = expect_matches(r.expected, r.actual);
    return r;
  }
  if (op == "esadd") {
    r.actual = std::string("Isa:") +
               isa_err_name(m.esadd(actor_cpu(fx, step.at("actor")),
                                    page_ref(fx, step.at("page")),
                                    enclave_ref(fx, step.at("co_owner"))));
    r.description = step.at("actor").get<std::string>() + " esadd";
    r.ok = expect_matches(r.expected, r.actual);
    return r;
  }
  if (op == "establish_mismatch") {
    // A rogue enclave proposes a channel; the acceptor expects a different
    // measurement, so the handshake must tear the share down.
    const EnclaveId initiator = enclave_ref(fx, step.at("initiator"));
    const EnclaveId acceptor = enclave_ref(fx, step.at("acceptor"));
    const PhysPage page = page_ref(fx, step.at("page"));
    const VirtPage va = va_ref(fx, step.at("va"));
    m.os_map_page(m.find_enclave(acceptor)->process, va, page, kPermRW);
    ChannelRuntime rt(m, actor_cpu(fx, step.at("initiator")),
                      actor_cpu(fx, step.at("acceptor")));
    ChannelState ch;
    ch.page = page;
    ch.initiator = initiator;
    ch.acceptor = acceptor;
    ch.expected_digest_initiator =
        m.find_enclave(enclave_ref(fx, step.at("acceptor_expects")))->mrenclave;
    ch.expected_digest_acceptor = m.find_enclave(acceptor)->mrenclave;
    ChannelResult res = rt.establish(ch);
    r.actual = std::string("Channel:") + channel_err_name(res.err);
    if (res.err == ChannelErr::AttestationMismatch &&
        ch.phase != ChannelPhase::Destroyed) {
      r.actual += "+not-destroyed";
    }
    r.description = "establish " + step.at("initiator").get<std::string>() +
                    "->" + step.at("acceptor").get<std::string>();
    r.ok = expect_matches(r.expected, r.actual);
    return r;
  }
  if (op == "flip_prm") {
    PhysPage pa = step.contains("meta_of")
                      ? m.epcm_meta_page_of(page_ref(fx, step.at("meta_of")))
                      : page_ref(fx, step.at("page"));
    m.adversary_dram_flip_bit(pa, step.value("byte", std::size_t{0}),
                              step.value("bit", 0u));
    r.actual = "Flipped";
    r.description = "flip bit in prm page " + std::to_string(pa);
    r.ok = expect_matches(r.expected, r.actual);
    return r;
  }
  if (op == "iago") {
    r.actual = run_iago_step(step, fx, ctx);
    r.description = "iago " + step.at("kind").get<std::string>();
    r.ok = expect_matches(r.expected, r.actual);
    return r;
  }
  throw ScenarioError{"unknown step op: " + op};
}

AttackScenario scenario_from_json(const json& j) {
  AttackScenario s;
  s.name = j.at("name");
  s.table_row = j.at("row");
  s.attacker = j.value("attacker", "");
  s.target = j.value("target", "");
  s.expected_defense = j.value("defense", "");
  for (const json& step : j.at("steps")) s.steps_json.push_back(step.dump());
  if (s.table_row < 1 || s.table_row > 9) {
    throw ScenarioError{"row out of range in scenario " + s.name};
  }
  return s;
}

}  // namespace

std::vector<AttackScenario> parse_scenarios(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ScenarioError{std::string("scenario parse: ") + e.what()};
  }
  std::vector<AttackScenario> out;
  try {
    const json& list = doc.is_array() ? doc : doc.at("scenarios");
    for (const json& j : list) out.push_back(scenario_from_json(j));
  } catch (const json::exception& e) {
    throw ScenarioError{std::string("scenario document: ") + e.what()};
  }
  if (out.empty()) throw ScenarioError{"no scenarios"};
  return out;
}

AttackReport run_attack(const AttackScenario& scenario, Fixture& fixture) {
  AttackReport report;
  report.name = scenario.name;
  report.table_row = scenario.table_row;

  Machine& m = *fixture.machine;
  auto before_victim = snapshot_enclave(m, fixture.victim);
  auto before_monitor = snapshot_enclave(m, fixture.monitor);

  StepContext ctx;
  report.blocked = true;
  for (const std::string& text : scenario.steps_json) {
    StepResult r = run_step(json::parse(text), fixture, ctx);
    if (!r.ok) report.blocked = false;
    report.steps.push_back(std::move(r));
  }

  report.victim_preserved =
      snapshot_enclave(m, fixture.victim) == before_victim &&
      snapshot_enclave(m, fixture.monitor) == before_monitor;
  return report;
}

SuiteReport full_table_suite(const std::vector<AttackScenario>& scenarios,
                             const FixtureFactory& factory) {
  SuiteReport suite;
  for (int row = 1; row <= 9; ++row) {
    suite.rows.push_back({row, table_row_description(row), false, {}});
  }
  std::array<bool, 9> covered{};
  std::array<bool, 9> failed{};
  for (const AttackScenario& s : scenarios) {
    Fixture fx = factory();
    AttackReport rep = run_attack(s, fx);
    covered[s.table_row - 1] = true;
    if (!rep.passed()) failed[s.table_row - 1] = true;
    suite.rows[s.table_row - 1].scenarios.push_back(s.name);
    suite.reports.push_back(std::move(rep));
  }
  for (int row = 1; row <= 9; ++row) {
    suite.rows[row - 1].blocked = covered[row - 1] && !failed[row - 1];
  }
  return suite;
}

bool SuiteReport::all_blocked() const {
  for (const SuiteRow& r : rows) {
    if (!r.blocked) return false;
  }
  return true;
}

std::size_t SuiteReport::blocked_count() const {
  std::size_t n = 0;
  for (const SuiteRow& r : rows) n += r.blocked ? 1 : 0;
  return n;
}

std::string SuiteReport::to_json() const {
  ordered_json j;
  j["rows"] = ordered_json::array();
  for (const SuiteRow& r : rows) {
    j["rows"].push_back({{"row", r.row},
                         {"description", r.description},
                         {"blocked", r.blocked},
                         {"scenarios", r.scenarios}});
  }
  j["scenarios"] = ordered_json::array();
  for (const AttackReport& rep : reports) {
    ordered_json steps = ordered_json::array();
    for (const StepResult& s : rep.steps) {
      steps.push_back({{"step", s.description},
                       {"expected", s.expected},
                       {"actual", s.actual},
                       {"ok", s.ok}});
    }
    j["scenarios"].push_back({{"name", rep.name},
                              {"row", rep.table_row},
                              {"blocked", rep.blocked},
                              {"victim_preserved", rep.victim_preserved},
                              {"steps", steps}});
  }
  j["blocked_rows"] = blocked_count();
  return j.dump(2);
}

std::string SuiteReport::to_table() const {
  std::ostringstream os;
  os << "row  verdict  description\n";
  for (const SuiteRow& r : rows) {
    os << " " << r.row << "   " << (r.blocked ? "BLOCKED" : "BREACHED")
       << "  " << r.description << "\n";
  }
  os << blocked_count() << "/9 rows blocked\n";
  return os.str();
}

const std::map<std::string, std::set<int>>& ablation_predictions() {
  static const std::map<std::string, std::set<int>> preds = {
      {"bi-confinement", {4, 6}},
      {"owner-check", {2, 3, 5}},
      {"eexit-abort", {6}},
  };
  return preds;
}

AblationFlags ablation_by_name(const std::string& name) {
  AblationFlags f;
  if (name == "bi-confinement") {
    f.bi_confinement = false;
  } else if (name == "owner-check") {
    f.owner_check = false;
  } else if (name == "eexit-abort") {
    f.eexit_abort = false;
  } else {
    throw ScenarioError{"unknown ablation: " + name};
  }
  return f;
}

const char* default_scenarios_json() {
  return R"json({
  "scenarios": [
    {
      "name": "os-direct-read",
      "row": 1,
      "attacker": "os",
      "target": "victim, monitor",
      "defense": "protected memory reads as abort page",
      "steps": [
        {"op": "os_map", "process": "os", "va": 20, "page": "victim_data", "perms": "rw"},
        {"op": "access", "actor": "os", "va": 20, "kind": "read", "expect": "AbortPage"},
        {"op": "os_map", "process": "os", "va": 21, "page": "monitor_data", "perms": "rw"},
        {"op": "access", "actor": "os", "va": 21, "kind": "read", "expect": "AbortPage"},
        {"op": "access", "actor": "os", "va": 21, "kind": "write", "expect": "AbortPage"}
      ]
    },
    {
      "name": "os-pte-remap",
      "row": 1,
      "attacker": "os",
      "target": "monitor",
      "defense": "va recorded at load time must match",
      "steps": [
        {"op": "os_map", "process": "monitor", "va": "elrange_data", "page": "monitor_code", "perms": "rw"},
        {"op": "access", "actor": "monitor", "va": "elrange_data", "kind": "read", "expect": "Fault:VaMismatch"}
      ]
    },
    {
      "name": "rowhammer-epcm-meta",
      "row": 1,
      "attacker": "os",
      "target": "victim",
      "defense": "metadata integrity verified on access",
      "steps": [
        {"op": "flip_prm", "meta_of": "victim_data", "byte": 5, "bit": 3},
        {"op": "access", "actor": "victim", "va": "elrange_data", "kind": "read", "expect": "Fault:IntegrityViolation"}
      ]
    },
    {
      "name": "bienclave-reads-peer",
      "row": 2,
      "attacker": "attacker",
      "target": "victim",
      "defense": "ownership check on every translation",
      "steps": [
        {"op": "os_map", "process": "attacker", "va": "elrange_data", "page": "victim_data", "perms": "rw"},
        {"op": "access", "actor": "attacker", "va": "elrange_data", "kind": "read", "expect": "Fault:EpcmOwnerMismatch"},
        {"op": "access", "actor": "attacker", "va": "elrange_data", "kind": "write", "expect": "Fault:EpcmOwnerMismatch"}
      ]
    },
    {
      "name": "bienclave-reads-monitor",
      "row": 2,
      "attacker": "attacker",
      "target": "monitor",
      "defense": "ownership check on every translation",
      "steps": [
        {"op": "os_map", "process": "attacker", "va": "elrange_data", "page": "monitor_data", "perms": "rw"},
        {"op": "access", "actor": "attacker", "va": "elrange_data", "kind": "read", "expect": "Fault:EpcmOwnerMismatch"}
      ]
    },
    {
      "name": "monitor-reads-bienclave",
      "row": 3,
      "attacker": "monitor",
      "target": "victim",
      "defense": "monitor holds no right over private pages",
      "steps": [
        {"op": "os_map", "process": "monitor", "va": "elrange_data", "page": "victim_data", "perms": "rw"},
        {"op": "access", "actor": "monitor", "va": "elrange_data", "kind": "read", "expect": "Fault:EpcmOwnerMismatch"},
        {"op": "access", "actor": "monitor", "va": "elrange_data", "kind": "write", "expect": "Fault:EpcmOwnerMismatch"}
      ]
    },
    {
      "name": "bienclave-touches-dram",
      "row": 4,
      "attacker": "attacker",
      "target": "outside sandbox",
      "defense": "out-of-range access aborts inside the sandbox",
      "steps": [
        {"op": "access", "actor": "attacker", "va": "scratch", "kind": "read", "expect": "AbortPage"},
        {"op": "access", "actor": "attacker", "va": "scratch", "kind": "write", "expect": "AbortPage"}
      ]
    },
    {
      "name": "bienclave-jumps-peer",
      "row": 5,
      "attacker": "attacker",
      "target": "victim, monitor",
      "defense": "cross-enclave fetch denied; no nested entry",
      "steps": [
        {"op": "os_map", "process": "attacker", "va": "elrange_code", "page": "victim_code", "perms": "rx"},
        {"op": "access", "actor": "attacker", "va": "elrange_code", "kind": "exec", "expect": "Fault:EpcmOwnerMismatch"},
        {"op": "eenter", "actor": "attacker", "enclave": "monitor", "expect": "Isa:AlreadyInEnclave"}
      ]
    },
    {
      "name": "bienclave-exec-outside",
      "row": 6,
      "attacker": "attacker",
      "target": "outside sandbox",
      "defense": "fetch outside the sandbox aborts",
      "steps": [
        {"op": "access", "actor": "attacker", "va": "scratch", "kind": "exec", "expect": "AbortPage"}
      ]
    },
    {
      "name": "bienclave-eexit",
      "row": 6,
      "attacker": "attacker",
      "target": "outside sandbox",
      "defense": "exit to untrusted context faults",
      "steps": [
        {"op": "eexit", "actor": "attacker", "expect": "Isa:BiEnclaveEscapeFault"}
      ]
    },
    {
      "name": "os-cannot-share",
      "row": 7,
      "attacker": "os",
      "target": "victim",
      "defense": "sharing instructions demand enclave mode",
      "steps": [
        {"op": "esadd", "actor": "os", "page": "victim_data", "co_owner": "monitor", "expect": "Isa:NotInEnclave"}
      ]
    },
    {
      "name": "rogue-attestation",
      "row": 7,
      "attacker": "attacker",
      "target": "monitor",
      "defense": "measurement mismatch destroys the share",
      "steps": [
        {"op": "establish_mismatch", "initiator": "attacker", "acceptor": "monitor", "acceptor_expects": "victim", "page": "attacker_spare", "va": "channel", "expect": "Channel:AttestationMismatch"}
      ]
    },
    {
      "name": "os-eavesdrop-channel",
      "row": 8,
      "attacker": "os",
      "target": "shared channel",
      "defense": "channel lives in protected memory only",
      "steps": [
        {"op": "os_map", "process": "os", "va": 20, "page": "channel", "perms": "rw"},
        {"op": "access", "actor": "os", "va": 20, "kind": "read", "expect": "AbortPage"}
      ]
    },
    {
      "name": "os-tamper-channel",
      "row": 8,
      "attacker": "os",
      "target": "shared channel",
      "defense": "writes to the channel page are discarded",
      "steps": [
        {"op": "os_map", "process": "os", "va": 20, "page": "channel", "perms": "rw"},
        {"op": "access", "actor": "os", "va": 20, "kind": "write", "expect": "AbortPage"}
      ]
    },
    {
      "name": "iago-return-values",
      "row": 9,
      "attacker": "os",
      "target": "victim, monitor",
      "defense": "return validation at the monitor",
      "steps": [
        {"op": "iago", "kind": "range", "expect": "Iago:RangeViolation"},
        {"op": "iago", "kind": "descriptor", "expect": "Iago:UnknownDescriptor"},
        {"op": "iago", "kind": "sync", "expect": "Iago:SharedSyncObject"},
        {"op": "iago", "kind": "pointer", "expect": "Iago:RawPointerLeak"}
      ]
    }
  ]
})json";
}

}  // namespace sboxsim
