#include "sboxsim/fixture.hpp"

#include <stdexcept>

namespace sboxsim {

const char* kFixturePolicyText =
    "SYS_NUM ACTION\n"
    "0        0      // read     ALLOW\n"
    "1        2      // write    NOTIFY\n"
    "2        1      // open     LOG\n"
    "42       5      // connect  KILL\n"
    "43       3      // accept   TRAP\n"
    "\n"
    "BLACKLIST   0  \"/path/to/top/secret*\"\n"
    "WHITELIST   2  \"/path/to/no/secret/[a-z_\\-\\s0-9\\.]\"\n"
    "BLACKLIST  43  \"112.233.0.0/16\"\n";

namespace {

EnclaveImage make_image(ProcessId process, std::size_t page_count,
                        std::uint8_t fill) {
  EnclaveImage img;
  img.process = process;
  img.elrange_base = kFixtureElrangeBase;
  img.elrange_len = kFixtureElrangeLen;
  for (std::size_t i = 0; i < page_count; ++i) {
    EnclaveImagePage p;
    p.va = kFixtureElrangeBase + i;
    p.content.assign(64, static_cast<std::uint8_t>(fill + i));
    p.perms = i == 1 ? kPermRX : kPermRW;  // page 1 is the code page
    img.pages.push_back(std::move(p));
  }
  return img;
}

EnclaveId must_create(Machine& m, const EnclaveImage& img, EnclaveKind kind) {
  auto r = m.ecreate_add_init(img, kind);
  if (auto* err = std::get_if<IsaErr>(&r)) {
    throw std::runtime_error(std::string("fixture enclave: ") +
                             isa_err_name(*err));
  }
  return std::get<EnclaveId>(r);
}

PhysPage page_at(const Machine& m, EnclaveId id, VirtPage va) {
  const Secs* s = m.find_enclave(id);
  return m.page_tables().at(s->process).at(va).pa;
}

}  // namespace

Fixture make_default_fixture(AblationFlags ablate) {
  Fixture fx;
  fx.machine = std::make_unique<Machine>(
      MachineConfig{.phys_pages = 192, .epc_pages = 64, .cpus = 4,
                    .va_pages = 64},
      ablate);
  Machine& m = *fx.machine;

  // Attacker and victim are bi-enclaves with three pages each; the monitor
  // keeps va 10 free so the channel page can be mapped there in its space.
  fx.attacker = must_create(m, make_image(fx.proc_attacker, 3, 0x10),
                            EnclaveKind::BiEnclave);
  fx.victim = must_create(m, make_image(fx.proc_victim, 3, 0x20),
                          EnclaveKind::BiEnclave);
  fx.monitor = must_create(m, make_image(fx.proc_monitor, 2, 0x30),
                           EnclaveKind::Monitor);

  fx.pages["attacker_data"] = page_at(m, fx.attacker, 8);
  fx.pages["attacker_code"] = page_at(m, fx.attacker, 9);
  fx.pages["attacker_spare"] = page_at(m, fx.attacker, 10);
  fx.pages["victim_data"] = page_at(m, fx.victim, 8);
  fx.pages["victim_code"] = page_at(m, fx.victim, 9);
  fx.pages["channel"] = page_at(m, fx.victim, 10);
  fx.pages["monitor_data"] = page_at(m, fx.monitor, 8);
  fx.pages["monitor_code"] = page_at(m, fx.monitor, 9);
  fx.vas["elrange_data"] = 8;
  fx.vas["elrange_code"] = 9;
  fx.vas["channel"] = 10;
  fx.vas["scratch"] = kFixtureScratchVa;

  // Ordinary DRAM reachable from every process at the scratch va.
  for (ProcessId p : {ProcessId{0}, fx.proc_attacker, fx.proc_victim,
                      fx.proc_monitor}) {
    m.os_map_page(p, kFixtureScratchVa, kFixtureDramPage, kPermRWX);
  }

  m.schedule(fx.cpu_os, 0);
  if (m.eenter(fx.cpu_attacker, fx.attacker) != IsaErr::Ok ||
      m.eenter(fx.cpu_victim, fx.victim) != IsaErr::Ok ||
      m.eenter(fx.cpu_monitor, fx.monitor) != IsaErr::Ok) {
    throw std::runtime_error("fixture eenter failed");
  }

  // Attested channel: victim initiates, monitor accepts at the same va.
  m.os_map_page(fx.proc_monitor, fx.vas["channel"], fx.pages["channel"],
                kPermRW);
  fx.runtime =
      std::make_unique<ChannelRuntime>(m, fx.cpu_victim, fx.cpu_monitor);
  fx.channel.page = fx.pages["channel"];
  fx.channel.initiator = fx.victim;
  fx.channel.acceptor = fx.monitor;
  fx.channel.expected_digest_initiator = m.find_enclave(fx.victim)->mrenclave;
  fx.channel.expected_digest_acceptor = m.find_enclave(fx.monitor)->mrenclave;
  ChannelResult res = fx.runtime->establish(fx.channel);
  if (!res.ok()) {
    throw std::runtime_error(std::string("fixture channel: ") +
                             channel_err_name(res.err));
  }

  if (auto err = fx.monitor_sw.load_policy_text(kFixturePolicyText)) {
    throw std::runtime_error("fixture policy: " + err->reason);
  }
  fx.monitor_sw.register_channel(fx.victim);
  fx.monitor_sw.set_va_oracle([&m = *fx.machine](EnclaveId id,
                                                 std::uint64_t va) {
    const Secs* s = m.find_enclave(id);
    return s && va >= s->elrange_base && va < s->elrange_base + s->elrange_len;
  });
  return fx;
}

std::map<PhysPage, Page> snapshot_enclave(const Machine& m, EnclaveId id) {
  std::map<PhysPage, Page> snap;
  const Secs* s = m.find_enclave(id);
  if (!s) return snap;
  for (std::uint64_t i = 0; i < m.epcm_entry_count(); ++i) {
    const PhysPage pa = m.epc_base() + i;
    const EpcmEntry& e = m.epcm(pa);
    if (!e.valid) continue;
    const bool mine = e.owner_secs == s->secs_page ||
                      (e.co_owner_secs && *e.co_owner_secs == s->secs_page);
    if (mine) snap[pa] = m.raw_page(pa);
  }
  return snap;
}

}  // namespace sboxsim
