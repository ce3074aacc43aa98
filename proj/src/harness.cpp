#include "sboxsim/harness.hpp"

#include <chrono>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace sboxsim {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr char kB64Alphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string read_file_or_throw(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw HarnessError{1, "cannot open file: " + path};
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::uint8_t parse_perms(const std::string& s) {
  std::uint8_t p = 0;
  for (char c : s) {
    if (c == 'r') p |= kPermRead;
    else if (c == 'w') p |= kPermWrite;
    else if (c == 'x') p |= kPermExec;
    else throw HarnessError{1, "bad perms string: " + s};
  }
  return p;
}

EnclaveKind parse_kind(const std::string& s) {
  if (s == "bi") return EnclaveKind::BiEnclave;
  if (s == "monitor") return EnclaveKind::Monitor;
  if (s == "normal") return EnclaveKind::Normal;
  throw HarnessError{1, "bad enclave kind: " + s};
}

SyscallArgs syscall_args_from_json(const json& j) {
  SyscallArgs a;
  if (j.contains("path")) a.path = j.at("path").get<std::string>();
  if (j.contains("ipv4")) {
    auto addr = parse_ipv4(j.at("ipv4").get<std::string>());
    if (!addr) throw HarnessError{1, "bad ipv4 in trace"};
    a.ipv4 = *addr;
  }
  if (j.contains("port")) a.port = j.at("port").get<std::uint16_t>();
  if (j.contains("len")) a.len = j.at("len").get<std::uint64_t>();
  if (j.contains("fd_handle")) {
    a.fd_handle = j.at("fd_handle").get<std::uint64_t>();
  }
  if (j.contains("addr_va")) a.addr_va = j.at("addr_va").get<std::uint64_t>();
  return a;
}

json syscall_args_to_json(const SyscallArgs& a) {
  json j = json::object();
  if (a.path) j["path"] = *a.path;
  if (a.ipv4) j["ipv4_raw"] = *a.ipv4;
  if (a.port) j["port"] = *a.port;
  if (a.len) j["len"] = *a.len;
  if (a.fd_handle) j["fd_handle"] = *a.fd_handle;
  if (a.addr_va) j["addr_va"] = *a.addr_va;
  return j;
}

// Wire format for the syscall upcall: fn 1, request bytes in, a fixed
// response buffer out. The response JSON is null-padded to the buffer.
constexpr std::uint32_t kSyscallFn = 1;
constexpr std::uint32_t kEchoFn = 2;
constexpr std::uint32_t kSyscallRespBytes = 512;

CallDescriptor syscall_call_descriptor() {
  CallDescriptor d;
  d.fn = kSyscallFn;
  d.params.push_back({"request", ParamType::CountedArray, ParamDir::In, 0, 1});
  d.params.push_back(
      {"response", ParamType::FixedBuffer, ParamDir::Out, kSyscallRespBytes, 1});
  return d;
}

struct BoundChannel {
  std::unique_ptr<ChannelRuntime> runtime;
  ChannelState state;
  EnclaveId initiator_id = 0;
};

struct ReplayState {
  std::unique_ptr<Machine> machine;
  Monitor monitor;
  HonestKernel kernel;
  std::map<std::string, EnclaveId> ids;
  std::map<std::string, CpuId> cpus;
  std::map<std::string, BoundChannel> channels;  // keyed by initiator name
  std::optional<std::string> monitor_name;
};

std::string outcome_to_response(const SyscallOutcome& out) {
  ordered_json r;
  r["verdict"] = verdict_kind_name(out.verdict.kind);
  if (!out.verdict.detail.empty()) r["detail"] = out.verdict.detail;
  if (out.ret) r["ret"] = out.ret->value;
  if (out.iago) {
    r["iago"] = {{"kind", iago_kind_name(out.iago->kind)},
                 {"detail", out.iago->detail}};
  }
  return r.dump();
}

void build_machine(const RunConfig& cfg, ReplayState& st) {
  st.machine = std::make_unique<Machine>(cfg.machine);
  Machine& m = *st.machine;

  for (const EnclaveSpec& e : cfg.enclaves) {
    if (st.ids.contains(e.name)) {
      throw HarnessError{1, "duplicate enclave name: " + e.name};
    }
    if (e.cpu >= cfg.machine.cpus) {
      throw HarnessError{1, "enclave " + e.name + " assigned missing cpu"};
    }
    EnclaveImage img;
    img.process = e.process;
    img.elrange_base = e.elrange_base;
    img.elrange_len = e.elrange_len;
    for (const EnclavePageSpec& p : e.pages) {
      img.pages.push_back({p.va, p.content, p.perms});
    }
    auto r = m.ecreate_add_init(img, e.kind);
    if (auto* err = std::get_if<IsaErr>(&r)) {
      throw HarnessError{1, "enclave " + e.name + ": " + isa_err_name(*err)};
    }
    st.ids[e.name] = std::get<EnclaveId>(r);
    st.cpus[e.name] = e.cpu;
    if (e.kind == EnclaveKind::Monitor) {
      if (st.monitor_name) throw HarnessError{1, "more than one monitor"};
      st.monitor_name = e.name;
    }
    if (m.eenter(e.cpu, st.ids[e.name]) != IsaErr::Ok) {
      throw HarnessError{1, "cannot enter enclave " + e.name};
    }
  }
  if (!st.monitor_name && !cfg.channels.empty()) {
    throw HarnessError{1, "channels configured without a monitor enclave"};
  }

  if (auto err = st.monitor.load_policy_text(cfg.policy_text)) {
    throw HarnessError{1, "policy line " + std::to_string(err->line) + ": " +
                              err->reason};
  }
  st.monitor.set_va_oracle([&m](EnclaveId id, std::uint64_t va) {
    const Secs* s = m.find_enclave(id);
    return s && va >= s->elrange_base && va < s->elrange_base + s->elrange_len;
  });

  for (const ChannelSpec& c : cfg.channels) {
    if (!st.ids.contains(c.initiator) || !st.ids.contains(c.acceptor)) {
      throw HarnessError{1, "channel references unknown enclave"};
    }
    const EnclaveId init_id = st.ids.at(c.initiator);
    const EnclaveId acc_id = st.ids.at(c.acceptor);
    const Secs* init = m.find_enclave(init_id);
    auto pte = m.page_tables().at(init->process).find(c.share_va);
    if (pte == m.page_tables().at(init->process).end()) {
      throw HarnessError{1, "channel share_va not mapped for " + c.initiator};
    }
    BoundChannel bc;
    bc.initiator_id = init_id;
    bc.runtime = std::make_unique<ChannelRuntime>(m, st.cpus.at(c.initiator),
                                                  st.cpus.at(c.acceptor));
    m.os_map_page(m.find_enclave(acc_id)->process, c.map_va, pte->second.pa,
                  kPermRW);
    bc.state.page = pte->second.pa;
    bc.state.initiator = init_id;
    bc.state.acceptor = acc_id;
    bc.state.expected_digest_initiator = init->mrenclave;
    bc.state.expected_digest_acceptor = m.find_enclave(acc_id)->mrenclave;
    ChannelResult res = bc.runtime->establish(bc.state);
    if (!res.ok()) {
      throw HarnessError{1, std::string("channel establish failed: ") +
                                channel_err_name(res.err)};
    }
    st.monitor.register_channel(init_id);

    ChannelRuntime* rt = bc.runtime.get();
    const EnclaveId origin = init_id;
    rt->register_handler(kSyscallFn, [&st, origin](auto& params) {
      auto& req_bytes = std::get<std::vector<std::uint8_t>>(params.at(0));
      json req_j = json::parse(req_bytes.begin(), req_bytes.end());
      SyscallRequest req;
      req.origin = origin;
      req.sysno = req_j.at("sysno").get<std::uint64_t>();
      req.args = syscall_args_from_json(req_j.value("args", json::object()));
      const std::string resp = outcome_to_response(
          st.monitor.handle(req, st.kernel));
      auto& out = std::get<std::vector<std::uint8_t>>(params.at(1));
      out.assign(kSyscallRespBytes, 0);
      std::copy(resp.begin(), resp.end(), out.begin());
    });
    rt->register_handler(kEchoFn, [](auto& params) {
      // Deterministic transform so round-trips are observable: scalars are
      // incremented, buffers reversed.
      for (CallValue& v : params) {
        if (auto* n = std::get_if<std::uint64_t>(&v)) {
          *n += 1;
        } else {
          auto& bytes = std::get<std::vector<std::uint8_t>>(v);
          std::reverse(bytes.begin(), bytes.end());
        }
      }
    });
    st.channels.emplace(c.initiator, std::move(bc));
  }
}

ordered_json replay_syscall(ReplayState& st, const std::string& actor,
                            const json& body) {
  ordered_json rec;
  rec["sysno"] = body.at("sysno").get<std::uint64_t>();
  auto ch = st.channels.find(actor);
  if (ch == st.channels.end()) {
    // No attested channel: the request cannot reach the monitor at all.
    rec["verdict"] = "Denied";
    rec["detail"] = "no channel to monitor";
    return rec;
  }
  ordered_json req;
  req["sysno"] = body.at("sysno");
  if (body.contains("args")) req["args"] = body.at("args");
  const std::string req_text = req.dump();

  CallDescriptor desc = syscall_call_descriptor();
  std::vector<CallValue> args;
  args.emplace_back(
      std::vector<std::uint8_t>(req_text.begin(), req_text.end()));
  args.emplace_back(std::vector<std::uint8_t>(kSyscallRespBytes, 0));
  ChannelResult res = ch->second.runtime->call(ch->second.state, desc, args);
  if (!res.ok()) {
    rec["verdict"] = "ChannelError";
    rec["detail"] = channel_err_name(res.err);
    return rec;
  }
  auto& resp_bytes = std::get<std::vector<std::uint8_t>>(args.at(1));
  std::string resp(resp_bytes.begin(),
                   std::find(resp_bytes.begin(), resp_bytes.end(), '\0'));
  json resp_j = json::parse(resp);
  for (auto& [k, v] : resp_j.items()) rec[k] = v;
  return rec;
}

ordered_json replay_mem_access(ReplayState& st, const std::string& actor,
                               const json& body) {
  Machine& m = *st.machine;
  const CpuId cpu = st.cpus.at(actor);
  const VirtPage va = body.at("va").get<VirtPage>();
  const std::string kind = body.at("kind").get<std::string>();
  std::array<std::uint8_t, 8> buf{};
  AccessOutcome o;
  if (kind == "read") {
    o = m.read_bytes(cpu, va, 0, std::span(buf));
  } else if (kind == "write") {
    buf.fill(0x5A);
    o = m.write_bytes(cpu, va, 0, std::span(buf));
  } else if (kind == "exec") {
    o = m.translate({cpu, va, AccessKind::Execute});
  } else {
    throw HarnessError{1, "bad mem_access kind: " + kind};
  }
  ordered_json rec;
  rec["va"] = va;
  rec["kind"] = kind;
  rec["outcome"] = outcome_name(o);
  return rec;
}

CallValue call_value_from_json(const json& v) {
  if (v.is_number()) return v.get<std::uint64_t>();
  if (v.is_string()) {
    const std::string s = v.get<std::string>();
    return std::vector<std::uint8_t>(s.begin(), s.end());
  }
  throw HarnessError{1, "bad channel_call arg"};
}

ordered_json replay_channel_call(ReplayState& st, const std::string& actor,
                                 const json& body) {
  ordered_json rec;
  auto ch = st.channels.find(actor);
  if (ch == st.channels.end()) {
    rec["result"] = "NoChannel";
    return rec;
  }
  CallDescriptor desc = call_descriptor_from_json(body.at("desc").dump());
  std::vector<CallValue> args;
  for (const json& a : body.value("args", json::array())) {
    args.push_back(call_value_from_json(a));
  }
  ChannelResult res = ch->second.runtime->call(ch->second.state, desc, args);
  rec["result"] = channel_err_name(res.err);
  if (res.ok()) {
    ordered_json out = ordered_json::array();
    for (const CallValue& v : args) {
      if (const auto* n = std::get_if<std::uint64_t>(&v)) {
        out.push_back(*n);
      } else {
        out.push_back(
            base64_encode(std::span(std::get<std::vector<std::uint8_t>>(v))));
      }
    }
    rec["out_args"] = out;
  }
  return rec;
}

std::string iso_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

}  // namespace

std::string base64_encode(std::span<const std::uint8_t> data) {
  std::string out;
  out.reserve((data.size() + 2) / 3 * 4);
  for (std::size_t i = 0; i < data.size(); i += 3) {
    std::uint32_t n = std::uint32_t(data[i]) << 16;
    if (i + 1 < data.size()) n |= std::uint32_t(data[i + 1]) << 8;
    if (i + 2 < data.size()) n |= data[i + 2];
    out.push_back(kB64Alphabet[(n >> 18) & 63]);
    out.push_back(kB64Alphabet[(n >> 12) & 63]);
    out.push_back(i + 1 < data.size() ? kB64Alphabet[(n >> 6) & 63] : '=');
    out.push_back(i + 2 < data.size() ? kB64Alphabet[n & 63] : '=');
  }
  return out;
}

std::optional<std::vector<std::uint8_t>> base64_decode(
    const std::string& text) {
  auto value_of = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (text.size() % 4 != 0) return std::nullopt;
  std::vector<std::uint8_t> out;
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int pad = 0;
    std::uint32_t n = 0;
    for (int k = 0; k < 4; ++k) {
      char c = text[i + k];
      if (c == '=' && i + 4 == text.size() && k >= 2) {
        ++pad;
        n <<= 6;
        continue;
      }
      int v = value_of(c);
      if (v < 0 || pad > 0) return std::nullopt;
      n = (n << 6) | std::uint32_t(v);
    }
    out.push_back(std::uint8_t(n >> 16));
    if (pad < 2) out.push_back(std::uint8_t(n >> 8));
    if (pad < 1) out.push_back(std::uint8_t(n));
  }
  return out;
}

std::vector<TraceEvent> parse_trace(const std::string& text) {
  std::vector<json> raw;
  const auto first = text.find_first_not_of(" \t\r\n");
  try {
    if (first != std::string::npos && text[first] == '[') {
      for (json& j : json::parse(text)) raw.push_back(std::move(j));
    } else {
      std::istringstream in(text);
      std::string line;
      while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        raw.push_back(json::parse(line));
      }
    }
  } catch (const json::exception& e) {
    throw HarnessError{1, std::string("trace parse: ") + e.what()};
  }
  std::vector<TraceEvent> events;
  std::uint64_t last_seq = 0;
  for (const json& j : raw) {
    TraceEvent ev;
    ev.seq = j.at("seq").get<std::uint64_t>();
    ev.actor = j.at("actor").get<std::string>();
    ev.op = j.at("op").get<std::string>();
    ev.body_json = j.dump();
    if (!events.empty() && ev.seq <= last_seq) {
      throw HarnessError{1, "trace seq not strictly increasing at seq " +
                                std::to_string(ev.seq)};
    }
    last_seq = ev.seq;
    events.push_back(std::move(ev));
  }
  return events;
}

RunConfig load_run_config(const std::string& config_json,
                          const std::string& base_dir) {
  json doc;
  try {
    doc = json::parse(config_json);
  } catch (const json::exception& e) {
    throw HarnessError{1, std::string("config parse: ") + e.what()};
  }
  auto resolve = [&base_dir](const std::string& p) {
    if (p.empty() || p.front() == '/' || base_dir.empty()) return p;
    return base_dir + "/" + p;
  };

  RunConfig cfg;
  try {
    const json& m = doc.at("machine");
    cfg.machine.phys_pages = m.at("phys_pages").get<std::uint64_t>();
    cfg.machine.epc_pages = m.at("epc_pages").get<std::uint64_t>();
    cfg.machine.cpus = m.at("cpus").get<std::uint64_t>();
    cfg.machine.va_pages = m.at("va_pages").get<std::uint64_t>();

    if (doc.contains("policy_path")) {
      cfg.policy_text = read_file_or_throw(
          resolve(doc.at("policy_path").get<std::string>()));
    } else {
      cfg.policy_text = doc.at("policy").get<std::string>();
    }

    for (const json& e : doc.at("enclaves")) {
      EnclaveSpec spec;
      spec.name = e.at("name").get<std::string>();
      spec.kind = parse_kind(e.value("kind", "bi"));
      spec.process = e.at("process").get<ProcessId>();
      spec.cpu = e.at("cpu").get<CpuId>();
      spec.elrange_base = e.at("elrange_base").get<VirtPage>();
      spec.elrange_len = e.at("elrange_len").get<std::uint64_t>();
      for (const json& p : e.at("pages")) {
        EnclavePageSpec page;
        page.va = p.at("va").get<VirtPage>();
        page.perms = parse_perms(p.value("perms", "rw"));
        if (p.contains("content_b64")) {
          auto bytes = base64_decode(p.at("content_b64").get<std::string>());
          if (!bytes || bytes->size() > kPageBytes) {
            throw HarnessError{1, "bad content_b64 in enclave " + spec.name};
          }
          page.content = std::move(*bytes);
        }
        spec.pages.push_back(std::move(page));
      }
      cfg.enclaves.push_back(std::move(spec));
    }

    for (const json& c : doc.value("channels", json::array())) {
      ChannelSpec spec;
      spec.initiator = c.at("initiator").get<std::string>();
      spec.acceptor = c.at("acceptor").get<std::string>();
      spec.share_va = c.at("share_va").get<VirtPage>();
      spec.map_va = c.at("map_va").get<VirtPage>();
      cfg.channels.push_back(std::move(spec));
    }

    if (doc.contains("trace_path")) {
      cfg.trace = parse_trace(
          read_file_or_throw(resolve(doc.at("trace_path").get<std::string>())));
    } else if (doc.contains("trace")) {
      cfg.trace = parse_trace(doc.at("trace").dump());
    }
  } catch (const json::exception& e) {
    throw HarnessError{1, std::string("config field: ") + e.what()};
  }
  return cfg;
}

ReplayResult run_replay(const RunConfig& cfg, std::uint64_t seed,
                        const TraceSink& access_trace) {
  ReplayState st;
  build_machine(cfg, st);
  if (access_trace) st.machine->set_trace_sink(access_trace);

  ordered_json report;
  report["timestamp"] = iso_timestamp();
  report["seed"] = seed;
  report["events"] = ordered_json::array();

  std::map<std::uint64_t, std::uint64_t> syscall_counts;
  std::map<std::string, std::uint64_t> verdict_counts;

  for (const TraceEvent& ev : cfg.trace) {
    if (!st.ids.contains(ev.actor)) {
      throw HarnessError{2, "trace seq " + std::to_string(ev.seq) +
                                " references unknown actor '" + ev.actor +
                                "'"};
    }
    const json body = json::parse(ev.body_json);
    ordered_json rec;
    rec["seq"] = ev.seq;
    rec["actor"] = ev.actor;
    rec["op"] = ev.op;
    ordered_json detail;
    if (ev.op == "syscall") {
      detail = replay_syscall(st, ev.actor, body);
      syscall_counts[detail["sysno"].get<std::uint64_t>()] += 1;
      verdict_counts[detail.value("verdict", "ChannelError")] += 1;
    } else if (ev.op == "mem_access") {
      detail = replay_mem_access(st, ev.actor, body);
    } else if (ev.op == "channel_call") {
      detail = replay_channel_call(st, ev.actor, body);
    } else {
      throw HarnessError{1, "trace seq " + std::to_string(ev.seq) +
                                ": unknown op '" + ev.op + "'"};
    }
    rec["detail"] = detail;
    report["events"].push_back(std::move(rec));
  }

  ordered_json counts = ordered_json::object();
  for (const auto& [sysno, n] : syscall_counts) {
    counts[std::to_string(sysno)] = n;
  }
  report["syscall_counts"] = counts;
  report["verdict_counts"] = verdict_counts;

  ordered_json violations = ordered_json::array();
  for (const MonitorEvent& e : st.monitor.events()) {
    std::string actor;
    for (const auto& [name, id] : st.ids) {
      if (id == e.enclave) actor = name;
    }
    violations.push_back({{"kind", e.kind},
                          {"actor", actor},
                          {"sysno", e.sysno},
                          {"detail", e.detail}});
  }
  report["violations"] = violations;

  ordered_json terminated = ordered_json::array();
  for (const auto& [name, id] : st.ids) {
    if (st.monitor.is_terminated(id)) terminated.push_back(name);
  }
  report["terminated"] = terminated;

  const AccountingLog& log = st.monitor.accounting();
  ResourceDelta totals = log.totals();
  report["accounting"] = {
      {"entries", log.entries().size()},
      {"chain_intact", !log.verify_chain().has_value()},
      {"totals",
       {{"file_read", totals.file_read},
        {"file_written", totals.file_written},
        {"net", totals.net}}},
  };

  ReplayResult out;
  out.report_json = report.dump(2);
  out.machine_dump_json = st.machine->dump_json();
  return out;
}

std::string strip_timestamp(const std::string& report_json) {
  ordered_json j = ordered_json::parse(report_json);
  if (j.contains("timestamp")) j["timestamp"] = "";
  return j.dump(2);
}

}  // namespace sboxsim
