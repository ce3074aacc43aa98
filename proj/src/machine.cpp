#include "sboxsim/machine.hpp"

#include <algorithm>
#include <cstring>

#include "json.hpp"
#include "sboxsim/crypto.hpp"

namespace sboxsim {

namespace {

constexpr std::size_t kEpcmEntryBytes = 64;

std::uint32_t page_sum(const Page& p) {
  // FNV-1a over the page; stands in for the memory engine's integrity tag.
  std::uint32_t h = 2166136261u;
  for (std::uint8_t b : p) {
    h ^= b;
    h *= 16777619u;
  }
  return h;
}

}  // namespace

const char* isa_err_name(IsaErr e) {
  switch (e) {
    case IsaErr::Ok: return "Ok";
    case IsaErr::OutOfEpc: return "OutOfEpc";
    case IsaErr::OverlapError: return "OverlapError";
    case IsaErr::AlreadyInitialized: return "AlreadyInitialized";
    case IsaErr::NotInitialized: return "NotInitialized";
    case IsaErr::AlreadyInEnclave: return "AlreadyInEnclave";
    case IsaErr::NotInEnclave: return "NotInEnclave";
    case IsaErr::BiEnclaveEscapeFault: return "BiEnclaveEscapeFault";
    case IsaErr::AlreadyLaunched: return "AlreadyLaunched";
    case IsaErr::NoSavedContext: return "NoSavedContext";
    case IsaErr::NotOwner: return "NotOwner";
    case IsaErr::AlreadyShared: return "AlreadyShared";
    case IsaErr::UnknownCoOwner: return "UnknownCoOwner";
    case IsaErr::PendingExists: return "PendingExists";
    case IsaErr::NoPendingShare: return "NoPendingShare";
    case IsaErr::WrongAcceptor: return "WrongAcceptor";
    case IsaErr::BadArgument: return "BadArgument";
  }
  return "?";
}

const char* fault_reason_name(FaultReason r) {
  switch (r) {
    case FaultReason::ElrangeMismatch: return "ElrangeMismatch";
    case FaultReason::EpcmOwnerMismatch: return "EpcmOwnerMismatch";
    case FaultReason::VaMismatch: return "VaMismatch";
    case FaultReason::PermDenied: return "PermDenied";
    case FaultReason::SharePendingBlocked: return "SharePendingBlocked";
    case FaultReason::IntegrityViolation: return "IntegrityViolation";
  }
  return "?";
}

std::string outcome_name(const AccessOutcome& o) {
  if (is_allow(o)) return "Allow";
  if (is_abort(o)) return "AbortPage";
  return std::string("Fault:") + fault_reason_name(std::get<Fault>(o).reason);
}

Machine::Machine(const MachineConfig& cfg, AblationFlags ablate)
    : cfg_(cfg), ablate_(ablate) {
#ifndef SBOXSIM_ABLATIONS
  if (!ablate_.all_enabled()) {
    throw ConfigError{"ablation flags require a test build"};
  }
#endif
  if (cfg.phys_pages == 0 || cfg.epc_pages == 0 || cfg.cpus == 0 ||
      cfg.va_pages == 0) {
    throw ConfigError{"all machine dimensions must be nonzero"};
  }
  epcm_meta_pages_ =
      (cfg.epc_pages * kEpcmEntryBytes + kPageBytes - 1) / kPageBytes;
  epc_base_ = epcm_meta_pages_;
  prm_pages_ = epc_base_ + cfg.epc_pages;
  if (prm_pages_ > cfg.phys_pages) {
    throw ConfigError{"EPC plus its metadata exceeds physical memory"};
  }
  if (cfg.phys_pages - 1 > kCoOwnerMax) {
    throw ConfigError{"physical page numbers must fit the 52-bit SECS field"};
  }
  mem_.assign(cfg.phys_pages, Page{});
  shadow_sum_.assign(prm_pages_, page_sum(Page{}));
  epcm_.assign(cfg.epc_pages, EpcmEntry{});
  cpus_.assign(cfg.cpus, Cpu{});
  page_tables_[0];  // the untrusted OS context
}

void Machine::os_map_page(ProcessId process, VirtPage va, PhysPage pa,
                          std::uint8_t perms, bool invalidate_tlb) {
  page_tables_[process][va] = PteValue{pa, perms};
  if (invalidate_tlb) invalidate_va(va);
}

void Machine::os_unmap_page(ProcessId process, VirtPage va,
                            bool invalidate_tlb) {
  page_tables_[process].erase(va);
  if (invalidate_tlb) invalidate_va(va);
}

void Machine::tlb_flush(CpuId cpu) { cpus_.at(cpu).tlb.clear(); }

void Machine::schedule(CpuId cpu, ProcessId process) {
  cpus_.at(cpu).process = process;
}

void Machine::adversary_dram_flip_bit(PhysPage pa, std::size_t byte,
                                      unsigned bit) {
  mem_.at(pa)[byte % kPageBytes] ^= static_cast<std::uint8_t>(1u << (bit % 8));
  // no shadow update: this write did not go through the memory engine
}

const Secs* Machine::find_enclave(EnclaveId id) const {
  auto it = enclaves_.find(id);
  return it == enclaves_.end() ? nullptr : &it->second;
}

std::optional<ShareRequest> Machine::pending_share(PhysPage page) const {
  auto it = pending_.find(page);
  if (it == pending_.end()) return std::nullopt;
  return it->second;
}

bool Machine::prm_intact(PhysPage pa) const {
  return page_sum(mem_[pa]) == shadow_sum_[pa];
}

void Machine::hw_write(PhysPage pa, std::size_t offset,
                       std::span<const std::uint8_t> data) {
  auto& page = mem_.at(pa);
  std::memcpy(page.data() + offset, data.data(), data.size());
  if (in_prm(pa)) shadow_sum_[pa] = page_sum(page);
}

void Machine::hw_zero(PhysPage pa) {
  mem_.at(pa).fill(0);
  if (in_prm(pa)) shadow_sum_[pa] = page_sum(mem_[pa]);
}

void Machine::shootdown(PhysPage pa) {
  for (auto& c : cpus_) {
    std::erase_if(c.tlb, [pa](const TlbEntry& e) { return e.pa == pa; });
  }
}

void Machine::invalidate_va(VirtPage va) {
  for (auto& c : cpus_) {
    std::erase_if(c.tlb, [va](const TlbEntry& e) { return e.va == va; });
  }
}

std::optional<PhysPage> Machine::alloc_epc_page() {
  for (std::uint64_t i = 0; i < epcm_.size(); ++i) {
    if (!epcm_[i].valid) return epc_base_ + i;
  }
  return std::nullopt;
}

PhysPage Machine::epcm_meta_page(std::uint64_t entry_index) const {
  return entry_index * kEpcmEntryBytes / kPageBytes;
}

Secs* Machine::enclave_of_mode(CpuId cpu) {
  const Mode& m = cpus_.at(cpu).mode;
  if (!m) return nullptr;
  auto it = enclaves_.find(*m);
  return it == enclaves_.end() ? nullptr : &it->second;
}

bool Machine::tlb_sound() const {
  for (std::size_t c = 0; c < cpus_.size(); ++c) {
    for (const TlbEntry& e : cpus_[c].tlb) {
      if (e.mode != cpus_[c].mode) return false;
      for (AccessKind k :
           {AccessKind::Read, AccessKind::Write, AccessKind::Execute}) {
        if (!(e.perms & perm_bit(k))) continue;
        AccessOutcome o =
            decide(static_cast<CpuId>(c), e.va, k, /*check_tlb_hit=*/false);
        const auto* a = std::get_if<Allow>(&o);
        if (!a || a->pa != e.pa) return false;
      }
    }
  }
  return true;
}

std::string Machine::dump_json() const {
  nlohmann::ordered_json j;
  j["config"] = {{"phys_pages", cfg_.phys_pages},
                 {"epc_pages", cfg_.epc_pages},
                 {"cpus", cfg_.cpus},
                 {"va_pages", cfg_.va_pages}};
  j["epc_base"] = epc_base_;
  j["prm_pages"] = prm_pages_;

  auto& epcm = j["epcm"] = nlohmann::ordered_json::array();
  for (std::uint64_t i = 0; i < epcm_.size(); ++i) {
    const EpcmEntry& e = epcm_[i];
    if (!e.valid) continue;
    nlohmann::ordered_json je = {
        {"pa", epc_base_ + i},
        {"owner_secs", e.owner_secs},
        {"mapped_va", e.mapped_va},
        {"kind", static_cast<int>(e.kind)},
        {"perms", e.perms},
        {"content_sha256",
         to_hex(crypto::sha256(std::span(mem_[epc_base_ + i])))},
    };
    if (e.co_owner_secs) je["co_owner_secs"] = *e.co_owner_secs;
    epcm.push_back(std::move(je));
  }

  auto& encl = j["enclaves"] = nlohmann::ordered_json::array();
  for (const auto& [id, s] : enclaves_) {
    encl.push_back({{"id", id},
                    {"elrange_base", s.elrange_base},
                    {"elrange_len", s.elrange_len},
                    {"bi_enclave", s.bi_enclave},
                    {"kind", enclave_kind_name(s.kind)},
                    {"initialized", s.initialized},
                    {"launched", s.launched},
                    {"mrenclave", to_hex(s.mrenclave)},
                    {"secs_page", s.secs_page},
                    {"ssa_page", s.ssa_page},
                    {"process", s.process}});
  }

  auto& pts = j["page_tables"] = nlohmann::ordered_json::array();
  for (const auto& [proc, table] : page_tables_) {
    nlohmann::ordered_json entries = nlohmann::ordered_json::array();
    for (const auto& [va, pte] : table) {
      entries.push_back({{"va", va}, {"pa", pte.pa}, {"perms", pte.perms}});
    }
    pts.push_back({{"process", proc}, {"entries", std::move(entries)}});
  }

  auto& cpus = j["cpus"] = nlohmann::ordered_json::array();
  for (const Cpu& c : cpus_) {
    nlohmann::ordered_json tlb = nlohmann::ordered_json::array();
    for (const TlbEntry& e : c.tlb) {
      tlb.push_back({{"va", e.va},
                     {"pa", e.pa},
                     {"mode", e.mode ? nlohmann::ordered_json(*e.mode)
                                     : nlohmann::ordered_json(nullptr)},
                     {"perms", e.perms}});
    }
    cpus.push_back(
        {{"mode", c.mode ? nlohmann::ordered_json(*c.mode)
                         : nlohmann::ordered_json(nullptr)},
         {"process", c.process},
         {"pc", c.state.pc},
         {"regs", c.state.regs},
         {"saved_ssa_for",
          c.saved_ssa_for ? nlohmann::ordered_json(*c.saved_ssa_for)
                          : nlohmann::ordered_json(nullptr)},
         {"tlb", std::move(tlb)}});
  }

  auto& pend = j["pending_shares"] = nlohmann::ordered_json::array();
  for (const auto& [page, req] : pending_) {
    pend.push_back({{"page", page},
                    {"owner", req.owner},
                    {"proposed_co_owner", req.proposed_co_owner}});
  }
  j["discarded_writes"] = discarded_writes_;
  return j.dump(2);
}

MachineConfig machine_config_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  MachineConfig cfg;
  cfg.phys_pages = j.at("phys_pages").get<std::uint64_t>();
  cfg.epc_pages = j.at("epc_pages").get<std::uint64_t>();
  cfg.cpus = j.at("cpus").get<std::uint64_t>();
  cfg.va_pages = j.at("va_pages").get<std::uint64_t>();
  return cfg;
}

}  // namespace sboxsim
