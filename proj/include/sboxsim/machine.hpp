#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "sboxsim/types.hpp"

namespace sboxsim {

struct MachineConfig {
  std::uint64_t phys_pages = 0;
  std::uint64_t epc_pages = 0;
  std::uint64_t cpus = 0;
  std::uint64_t va_pages = 0;

  bool operator==(const MachineConfig&) const = default;
};

struct ConfigError {
  std::string reason;
};

// Checks that can be switched off in ablation builds; every flag defaults
// to fully enabled. Release builds refuse to construct a machine with any
// flag cleared.
struct AblationFlags {
  bool bi_confinement = true;   // flowchart check (1)
  bool owner_check = true;      // flowchart check (2)
  bool eexit_abort = true;      // EEXIT abort on the bi-enclave flag

  bool all_enabled() const {
    return bi_confinement && owner_check && eexit_abort;
  }
};

struct EpcmEntry {
  bool valid = false;
  PhysPage owner_secs = 0;
  std::optional<PhysPage> co_owner_secs;  // 52-bit field, none = unshared
  VirtPage mapped_va = 0;
  PageKind kind = PageKind::Regular;
  std::uint8_t perms = 0;
};

struct Secs {
  EnclaveId id = 0;
  VirtPage elrange_base = 0;
  std::uint64_t elrange_len = 0;
  bool bi_enclave = false;
  bool initialized = false;
  Digest mrenclave{};
  PhysPage secs_page = 0;
  PhysPage ssa_page = 0;
  ProcessId process = 0;
  EnclaveKind kind = EnclaveKind::Normal;
  bool launched = false;      // bi-enclaves: one inbound EENTER total
};

struct PteValue {
  PhysPage pa = 0;
  std::uint8_t perms = 0;
};

using PageTable = std::map<VirtPage, PteValue>;

struct TlbEntry {
  VirtPage va = 0;
  PhysPage pa = 0;
  Mode mode;
  std::uint8_t perms = 0;
};

// Minimal register file; enough state to make AEX round-trips observable.
struct CpuState {
  std::array<std::uint64_t, 16> regs{};
  std::uint64_t pc = 0;

  bool operator==(const CpuState&) const = default;
};

struct Cpu {
  Mode mode;                       // nullopt = untrusted
  ProcessId process = 0;           // address space used in untrusted mode
  CpuState state;
  std::vector<TlbEntry> tlb;
  std::optional<EnclaveId> saved_ssa_for;
};

struct ShareRequest {
  EnclaveId owner = 0;
  PhysPage page = 0;
  EnclaveId proposed_co_owner = 0;
};

// Enclave instruction outcomes. Ok means the architectural effect happened.
enum class IsaErr : std::uint8_t {
  Ok = 0,
  OutOfEpc,
  OverlapError,
  AlreadyInitialized,
  NotInitialized,
  AlreadyInEnclave,
  NotInEnclave,
  BiEnclaveEscapeFault,
  AlreadyLaunched,
  NoSavedContext,
  NotOwner,
  AlreadyShared,
  UnknownCoOwner,
  PendingExists,
  NoPendingShare,
  WrongAcceptor,
  BadArgument,
};

const char* isa_err_name(IsaErr e);

enum class FaultReason : std::uint8_t {
  ElrangeMismatch,
  EpcmOwnerMismatch,
  VaMismatch,
  PermDenied,
  SharePendingBlocked,
  IntegrityViolation,
};

const char* fault_reason_name(FaultReason r);

struct Allow {
  PhysPage pa = 0;
  bool tlb_fill = false;
};
struct AbortPage {};
struct Fault {
  FaultReason reason;
};

using AccessOutcome = std::variant<Allow, AbortPage, Fault>;

inline bool is_allow(const AccessOutcome& o) {
  return std::holds_alternative<Allow>(o);
}
inline bool is_abort(const AccessOutcome& o) {
  return std::holds_alternative<AbortPage>(o);
}
inline bool is_fault(const AccessOutcome& o, FaultReason r) {
  const auto* f = std::get_if<Fault>(&o);
  return f && f->reason == r;
}

std::string outcome_name(const AccessOutcome& o);

struct AccessRequest {
  CpuId cpu = 0;
  VirtPage va = 0;
  AccessKind kind = AccessKind::Read;
};

struct EnclaveImagePage {
  VirtPage va = 0;
  std::vector<std::uint8_t> content;  // <= kPageBytes, zero-padded
  std::uint8_t perms = kPermRW;
};

struct EnclaveImage {
  VirtPage elrange_base = 0;
  std::uint64_t elrange_len = 0;  // must cover pages plus one SSA slot
  std::vector<EnclaveImagePage> pages;
  ProcessId process = 0;
};

using Page = std::array<std::uint8_t, kPageBytes>;

using TraceSink = std::function<void(const std::string& json_line)>;

class Machine {
 public:
  // Throws ConfigError on inconsistent configs. Ablations other than the
  // default are only honored when compiled with SBOXSIM_ABLATIONS.
  explicit Machine(const MachineConfig& cfg, AblationFlags ablate = {});

  const MachineConfig& config() const { return cfg_; }
  std::uint64_t epc_base() const { return epc_base_; }
  std::uint64_t prm_pages() const { return prm_pages_; }
  const AblationFlags& ablations() const { return ablate_; }

  bool in_prm(PhysPage pa) const { return pa < prm_pages_; }
  bool in_epc(PhysPage pa) const {
    return pa >= epc_base_ && pa < epc_base_ + cfg_.epc_pages;
  }
  // EPCM entries are indexed per EPC page.
  std::uint64_t epcm_index(PhysPage pa) const { return pa - epc_base_; }
  const EpcmEntry& epcm(PhysPage pa) const { return epcm_[epcm_index(pa)]; }
  std::uint64_t epcm_entry_count() const { return epcm_.size(); }

  // ---- untrusted OS surface (no preconditions: the OS is untrusted) ----
  void os_map_page(ProcessId process, VirtPage va, PhysPage pa,
                   std::uint8_t perms, bool invalidate_tlb = true);
  void os_unmap_page(ProcessId process, VirtPage va,
                     bool invalidate_tlb = true);
  void tlb_flush(CpuId cpu);
  void schedule(CpuId cpu, ProcessId process);
  // Direct-DRAM tampering that bypasses the memory engine bookkeeping;
  // detected lazily at the next protected access to the page.
  void adversary_dram_flip_bit(PhysPage pa, std::size_t byte, unsigned bit);

  // ---- enclave instructions ----
  std::variant<EnclaveId, IsaErr> ecreate_add_init(const EnclaveImage& image,
                                                   EnclaveKind kind);
  IsaErr eenter(CpuId cpu, EnclaveId id);
  IsaErr eexit(CpuId cpu);
  IsaErr aex(CpuId cpu);
  IsaErr eresume(CpuId cpu, EnclaveId id);
  IsaErr esadd(CpuId cpu, PhysPage page, EnclaveId co_owner);
  IsaErr esaccept(CpuId cpu, PhysPage page);
  // Channel teardown: zero page, drop co-owner, shoot down stale mappings.
  IsaErr destroy_share(PhysPage page);

  // ---- memory access through the guard ----
  AccessOutcome translate(const AccessRequest& req);
  // Decision only: no TLB fill, no counters, no trace. Used by the matrix
  // enumeration so probing does not perturb machine state.
  AccessOutcome translate_probe(CpuId cpu, VirtPage va, AccessKind kind) const;

  // Data moves only after the guard says Allow; forbidden reads observe the
  // abort value (all ones) and forbidden writes are discarded.
  AccessOutcome read_page(CpuId cpu, VirtPage va, Page& out);
  AccessOutcome write_page(CpuId cpu, VirtPage va, const Page& data);
  AccessOutcome read_bytes(CpuId cpu, VirtPage va, std::size_t offset,
                           std::span<std::uint8_t> out);
  AccessOutcome write_bytes(CpuId cpu, VirtPage va, std::size_t offset,
                            std::span<const std::uint8_t> data);

  // ---- introspection ----
  const Cpu& cpu(CpuId id) const { return cpus_.at(id); }
  Cpu& cpu_mut(CpuId id) { return cpus_.at(id); }
  const Secs* find_enclave(EnclaveId id) const;
  const std::map<EnclaveId, Secs>& enclaves() const { return enclaves_; }
  const std::map<ProcessId, PageTable>& page_tables() const {
    return page_tables_;
  }
  std::optional<ShareRequest> pending_share(PhysPage page) const;
  std::uint64_t discarded_write_count() const { return discarded_writes_; }
  // Whether a PRM page still matches its integrity tag.
  bool prm_page_intact(PhysPage pa) const { return prm_intact(pa); }
  PhysPage epcm_meta_page_of(PhysPage epc_pa) const {
    return epcm_meta_page(epcm_index(epc_pa));
  }

  // Raw page snapshot, bypassing the guard. Test/diff plumbing only.
  const Page& raw_page(PhysPage pa) const { return mem_.at(pa); }

  void set_trace_sink(TraceSink sink) { trace_ = std::move(sink); }

  // Re-validates every resident TLB entry against current EPCM/SECS state.
  // Returns false if any entry would no longer be allowed.
  bool tlb_sound() const;

  std::string dump_json() const;

 private:
  AccessOutcome decide(CpuId cpu, VirtPage va, AccessKind kind,
                       bool check_tlb_hit) const;
  bool prm_intact(PhysPage pa) const;
  void hw_write(PhysPage pa, std::size_t offset,
                std::span<const std::uint8_t> data);
  void hw_zero(PhysPage pa);
  void shootdown(PhysPage pa);
  void invalidate_va(VirtPage va);
  std::optional<PhysPage> alloc_epc_page();
  PhysPage epcm_meta_page(std::uint64_t entry_index) const;
  Secs* enclave_of_mode(CpuId cpu);
  void trace_access(CpuId cpu, VirtPage va, AccessKind kind,
                    const AccessOutcome& o);

  MachineConfig cfg_;
  AblationFlags ablate_;
  std::uint64_t epcm_meta_pages_ = 0;
  std::uint64_t epc_base_ = 0;
  std::uint64_t prm_pages_ = 0;
  std::vector<Page> mem_;
  std::vector<std::uint32_t> shadow_sum_;  // per PRM page
  std::vector<EpcmEntry> epcm_;
  std::map<ProcessId, PageTable> page_tables_;
  std::map<EnclaveId, Secs> enclaves_;
  std::vector<Cpu> cpus_;
  std::map<PhysPage, ShareRequest> pending_;
  EnclaveId next_enclave_id_ = 1;
  std::uint64_t discarded_writes_ = 0;
  TraceSink trace_;
};

MachineConfig machine_config_from_json(const std::string& text);

}  // namespace sboxsim
