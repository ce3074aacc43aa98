#pragma once

#include <map>
#include <memory>
#include <string>

#include "sboxsim/channel.hpp"
#include "sboxsim/machine.hpp"
#include "sboxsim/monitor.hpp"

namespace sboxsim {

// Canonical small machine used by the adversary suite and the harness:
// two bi-enclaves (attacker, victim), one monitor enclave, and an attested
// channel between the victim and the monitor.
//
// All three enclaves use the same ELRANGE [8, 16) in separate processes,
// so a forged page-table entry can point an attacker's in-range va at a
// victim page whose EPCM va matches. cpu0 runs the attacker, cpu1 the
// victim, cpu2 the monitor; cpu3 stays untrusted for the OS.
struct Fixture {
  std::unique_ptr<Machine> machine;
  std::unique_ptr<ChannelRuntime> runtime;
  ChannelState channel;       // victim <-> monitor, Attested
  Monitor monitor_sw;
  ScriptedKernel kernel;

  EnclaveId attacker = 0;
  EnclaveId victim = 0;
  EnclaveId monitor = 0;

  CpuId cpu_attacker = 0;
  CpuId cpu_victim = 1;
  CpuId cpu_monitor = 2;
  CpuId cpu_os = 3;

  ProcessId proc_attacker = 1;
  ProcessId proc_victim = 2;
  ProcessId proc_monitor = 3;

  // Named pages for scenario scripts.
  std::map<std::string, PhysPage> pages;
  std::map<std::string, VirtPage> vas;

  PhysPage page(const std::string& name) const { return pages.at(name); }
  VirtPage va(const std::string& name) const { return vas.at(name); }
};

inline constexpr VirtPage kFixtureElrangeBase = 8;
inline constexpr std::uint64_t kFixtureElrangeLen = 8;
inline constexpr VirtPage kFixtureScratchVa = 40;
inline constexpr PhysPage kFixtureDramPage = 100;

Fixture make_default_fixture(AblationFlags ablate = {});

// Content snapshot of every EPC page owned or co-owned by the enclave.
std::map<PhysPage, Page> snapshot_enclave(const Machine& m, EnclaveId id);

// The Listing-style policy text used by the fixture monitor.
extern const char* kFixturePolicyText;

}  // namespace sboxsim
