#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sboxsim/channel.hpp"
#include "sboxsim/machine.hpp"
#include "sboxsim/monitor.hpp"

namespace sboxsim {

struct HarnessError {
  int exit_code = 1;
  std::string diagnostic;
};

struct EnclavePageSpec {
  VirtPage va = 0;
  std::uint8_t perms = kPermRW;
  std::vector<std::uint8_t> content;  // decoded, <= page size
};

struct EnclaveSpec {
  std::string name;
  EnclaveKind kind = EnclaveKind::BiEnclave;
  ProcessId process = 0;
  CpuId cpu = 0;
  VirtPage elrange_base = 0;
  std::uint64_t elrange_len = 0;
  std::vector<EnclavePageSpec> pages;
};

struct ChannelSpec {
  std::string initiator;  // bi-enclave name
  std::string acceptor;   // monitor name
  VirtPage share_va = 0;  // initiator page donated to the channel
  VirtPage map_va = 0;    // where the acceptor's process maps it
};

// Replay workload: one event per trace line, strictly increasing seq.
struct TraceEvent {
  std::uint64_t seq = 0;
  std::string actor;
  std::string op;  // "syscall" | "channel_call" | "mem_access"
  std::string body_json;
};

struct RunConfig {
  MachineConfig machine;
  std::string policy_text;
  std::vector<EnclaveSpec> enclaves;
  std::vector<ChannelSpec> channels;
  std::vector<TraceEvent> trace;
};

// Parses the run-config document. File references (policy, trace) are
// resolved against base_dir. Throws HarnessError on malformed input.
RunConfig load_run_config(const std::string& config_json, const std::string& base_dir);

std::vector<TraceEvent> parse_trace(const std::string& text);

struct ReplayResult {
  std::string report_json;
  std::string machine_dump_json;
};

// Builds the machine described by the config, routes every syscall event
// through its enclave's attested channel to the monitor, and produces the
// report. Throws HarnessError (exit 2 on unknown actors, naming the seq).
ReplayResult run_replay(const RunConfig& cfg, std::uint64_t seed,
                        const TraceSink& access_trace = {});

// Report text with the timestamp field normalized, for byte comparisons.
std::string strip_timestamp(const std::string& report_json);

std::string base64_encode(std::span<const std::uint8_t> data);
std::optional<std::vector<std::uint8_t>> base64_decode(const std::string& text);

}  // namespace sboxsim
