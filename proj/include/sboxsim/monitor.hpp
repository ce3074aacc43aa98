#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "sboxsim/audit_log.hpp"
#include "sboxsim/policy.hpp"

namespace sboxsim {

// Well-known syscall numbers used by the simulated workloads (x86-64).
namespace sysno {
inline constexpr std::uint64_t kRead = 0;
inline constexpr std::uint64_t kWrite = 1;
inline constexpr std::uint64_t kOpen = 2;
inline constexpr std::uint64_t kClose = 3;
inline constexpr std::uint64_t kMmap = 9;
inline constexpr std::uint64_t kSocket = 41;
inline constexpr std::uint64_t kConnect = 42;
inline constexpr std::uint64_t kAccept = 43;
inline constexpr std::uint64_t kFutex = 202;
}  // namespace sysno

struct SyscallArgs {
  std::optional<std::string> path;
  std::optional<std::uint32_t> ipv4;
  std::optional<std::uint16_t> port;
  std::optional<std::uint64_t> len;
  std::optional<std::uint64_t> fd_handle;  // monitor-issued handle
  std::optional<std::uint64_t> addr_va;    // sync-object address
};

struct SyscallRequest {
  EnclaveId origin = 0;
  std::uint64_t sysno = 0;
  SyscallArgs args;
};

enum class VerdictKind : std::uint8_t {
  Execute,
  ExecuteLog,
  ExecuteNotify,
  Trap,
  Kill,
  Denied,
};

const char* verdict_kind_name(VerdictKind v);

struct Verdict {
  VerdictKind kind = VerdictKind::Denied;
  std::optional<std::size_t> rule_index;  // set when a rule decided
  std::string detail;
};

enum class IagoKind : std::uint8_t {
  RangeViolation,
  UnknownDescriptor,
  SharedSyncObject,
  RawPointerLeak,
};

const char* iago_kind_name(IagoKind k);

struct CheckedReturn {
  std::int64_t value = 0;
};

struct IagoViolation {
  IagoKind kind;
  std::string detail;
};

using ReturnCheck = std::variant<CheckedReturn, IagoViolation>;

// The simulated kernel. Honest by default; scripted overrides model a
// malicious OS crafting return values.
class KernelModel {
 public:
  virtual ~KernelModel() = default;
  virtual std::int64_t perform(const SyscallRequest& req,
                               std::int64_t kernel_fd_hint) = 0;
};

class HonestKernel : public KernelModel {
 public:
  std::int64_t perform(const SyscallRequest& req,
                       std::int64_t kernel_fd_hint) override;
};

// Returns scripted values in FIFO order for matching sysnos, otherwise
// behaves honestly.
class ScriptedKernel : public KernelModel {
 public:
  void script(std::uint64_t sysno, std::int64_t value);
  std::int64_t perform(const SyscallRequest& req,
                       std::int64_t kernel_fd_hint) override;

 private:
  HonestKernel honest_;
  std::map<std::uint64_t, std::vector<std::int64_t>> scripted_;
};

struct FdRecord {
  EnclaveId owner = 0;
  std::int64_t kernel_fd = -1;
  std::string tag;
};

// Monitor-issued descriptor handles; dense, never aliased across enclaves,
// and kernel descriptors are tracked so a reused value is caught.
class FdTable {
 public:
  std::uint64_t issue(EnclaveId owner, std::int64_t kernel_fd,
                      std::string tag);
  const FdRecord* resolve(EnclaveId owner, std::uint64_t handle) const;
  bool close(EnclaveId owner, std::uint64_t handle);
  bool kernel_fd_live(std::int64_t kernel_fd) const;

 private:
  std::map<std::uint64_t, FdRecord> handles_;
  std::set<std::int64_t> live_kernel_fds_;
  std::uint64_t next_handle_ = 1;
};

struct MonitorEvent {
  std::string kind;  // "notify" | "trap" | "kill" | "iago" | "deny"
  EnclaveId enclave = 0;
  std::uint64_t sysno = 0;
  std::string detail;
};

struct SyscallOutcome {
  Verdict verdict;
  std::optional<CheckedReturn> ret;
  std::optional<IagoViolation> iago;
  bool executed = false;
};

enum class MonitorErr : std::uint8_t { Ok, NoPolicyLoaded, NoChannel };

Verdict filter_syscall(const SyscallRequest& req, const Policy& policy);

ReturnCheck validate_return(const SyscallRequest& req, std::int64_t raw,
                            FdTable& fds,
                            const std::function<bool(EnclaveId, std::uint64_t)>&
                                va_inside_enclave);

// The monitor enclave's software: policy, filtering, return validation,
// descriptor tracking and chained accounting, serialized per request.
class Monitor {
 public:
  using TrapHook = std::function<void(const SyscallRequest&)>;

  std::optional<PolicyParseError> load_policy_text(const std::string& bytes);
  bool policy_loaded() const { return policy_.has_value(); }
  const Policy& policy() const { return *policy_; }

  // Digest query: bi-enclaves need an attested channel; the OS uses the
  // single upcall interface.
  std::variant<Digest, MonitorErr> digest_query_os() const;
  std::variant<Digest, MonitorErr> digest_query_enclave(EnclaveId id) const;

  void register_channel(EnclaveId bi_enclave);
  bool has_channel(EnclaveId id) const { return channels_.contains(id); }

  void set_trap_hook(TrapHook hook) { trap_hook_ = std::move(hook); }
  // Lets the harness tell the monitor which sync addresses are private to
  // an enclave; defaults to rejecting everything.
  void set_va_oracle(std::function<bool(EnclaveId, std::uint64_t)> f) {
    va_inside_enclave_ = std::move(f);
  }

  SyscallOutcome handle(const SyscallRequest& req, KernelModel& kernel);

  bool is_terminated(EnclaveId id) const { return killed_.contains(id); }
  const std::vector<MonitorEvent>& events() const { return events_; }
  AccountingLog& accounting() { return log_; }
  const AccountingLog& accounting() const { return log_; }
  FdTable& fd_table() { return fds_; }

 private:
  std::optional<Policy> policy_;
  std::set<EnclaveId> channels_;
  std::set<EnclaveId> killed_;
  FdTable fds_;
  AccountingLog log_;
  std::vector<MonitorEvent> events_;
  TrapHook trap_hook_;
  std::function<bool(EnclaveId, std::uint64_t)> va_inside_enclave_ =
      [](EnclaveId, std::uint64_t) { return false; };
  std::int64_t next_kernel_fd_hint_ = 100;
};

}  // namespace sboxsim
