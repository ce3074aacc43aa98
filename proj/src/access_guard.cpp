#include <cstring>

#include "json.hpp"
#include "sboxsim/machine.hpp"

namespace sboxsim {

// TLB-miss decision procedure. Ordering of the fault reasons is fixed:
// ElrangeMismatch, then owner, then share state, then mapped va, then perms.
AccessOutcome Machine::decide(CpuId cpu, VirtPage va, AccessKind kind,
                              bool check_tlb_hit) const {
  const Cpu& c = cpus_.at(cpu);
  if (va >= cfg_.va_pages) return Fault{FaultReason::VaMismatch};

  if (check_tlb_hit) {
    for (const TlbEntry& e : c.tlb) {
      if (e.va == va && e.mode == c.mode && (e.perms & perm_bit(kind))) {
        return Allow{e.pa, /*tlb_fill=*/false};
      }
    }
  }

  const Secs* enclave = nullptr;
  if (c.mode) {
    auto it = enclaves_.find(*c.mode);
    enclave = it == enclaves_.end() ? nullptr : &it->second;
  }
  const ProcessId process = enclave ? enclave->process : c.process;

  const PteValue* pte = nullptr;
  if (auto pit = page_tables_.find(process); pit != page_tables_.end()) {
    if (auto vit = pit->second.find(va); vit != pit->second.end()) {
      pte = &vit->second;
    }
  }

  if (!enclave) {
    // Untrusted mode: PRM is opaque, everything else is the OS's business.
    if (!pte) return Fault{FaultReason::VaMismatch};
    if (in_prm(pte->pa)) return AbortPage{};
    if (!(pte->perms & perm_bit(kind))) return Fault{FaultReason::PermDenied};
    return Allow{pte->pa, true};
  }

  const bool in_elrange = va >= enclave->elrange_base &&
                          va < enclave->elrange_base + enclave->elrange_len;
  if (!in_elrange) {
    // Check (1): sandboxed code must not translate to outside memory.
    if (enclave->bi_enclave && ablate_.bi_confinement) return AbortPage{};
    if (!pte) return Fault{FaultReason::VaMismatch};
    if (in_prm(pte->pa)) return AbortPage{};
    if (!(pte->perms & perm_bit(kind))) return Fault{FaultReason::PermDenied};
    return Allow{pte->pa, true};
  }

  // ELRANGE va: the PTE must target a valid EPC page of regular kind.
  if (!pte || !in_epc(pte->pa)) return Fault{FaultReason::ElrangeMismatch};
  const PhysPage pa = pte->pa;
  const std::uint64_t idx = epcm_index(pa);
  if (!prm_intact(epcm_meta_page(idx))) {
    return Fault{FaultReason::IntegrityViolation};
  }
  const EpcmEntry& e = epcm_[idx];
  if (!e.valid || e.kind == PageKind::SecsPage) {
    return Fault{FaultReason::ElrangeMismatch};
  }
  // Check (2): current enclave must be the owner or the recorded co-owner.
  if (ablate_.owner_check) {
    const bool owns = e.owner_secs == enclave->secs_page ||
                      (e.co_owner_secs &&
                       *e.co_owner_secs == enclave->secs_page);
    if (!owns) return Fault{FaultReason::EpcmOwnerMismatch};
  }
  if (e.kind == PageKind::SharePending) {
    return Fault{FaultReason::SharePendingBlocked};
  }
  if (e.mapped_va != va) return Fault{FaultReason::VaMismatch};
  if (!(e.perms & perm_bit(kind))) return Fault{FaultReason::PermDenied};
  if (!prm_intact(pa)) return Fault{FaultReason::IntegrityViolation};
  return Allow{pa, true};
}

AccessOutcome Machine::translate(const AccessRequest& req) {
  AccessOutcome o = decide(req.cpu, req.va, req.kind, /*check_tlb_hit=*/true);
  if (const auto* a = std::get_if<Allow>(&o); a && a->tlb_fill) {
    const Cpu& c = cpus_.at(req.cpu);
    std::uint8_t perms = 0;
    const Secs* enclave = nullptr;
    if (c.mode) enclave = find_enclave(*c.mode);
    if (enclave && req.va >= enclave->elrange_base &&
        req.va < enclave->elrange_base + enclave->elrange_len &&
        in_epc(a->pa)) {
      perms = epcm_[epcm_index(a->pa)].perms;
    } else {
      const ProcessId process = enclave ? enclave->process : c.process;
      perms = page_tables_.at(process).at(req.va).perms;
    }
    cpus_.at(req.cpu).tlb.push_back(TlbEntry{req.va, a->pa, c.mode, perms});
  }
  trace_access(req.cpu, req.va, req.kind, o);
  return o;
}

AccessOutcome Machine::translate_probe(CpuId cpu, VirtPage va,
                                       AccessKind kind) const {
  return decide(cpu, va, kind, /*check_tlb_hit=*/false);
}

AccessOutcome Machine::read_page(CpuId cpu, VirtPage va, Page& out) {
  AccessOutcome o = translate({cpu, va, AccessKind::Read});
  if (const auto* a = std::get_if<Allow>(&o)) {
    out = mem_[a->pa];
  } else {
    out.fill(0xFF);  // abort value
  }
  return o;
}

AccessOutcome Machine::write_page(CpuId cpu, VirtPage va, const Page& data) {
  AccessOutcome o = translate({cpu, va, AccessKind::Write});
  if (const auto* a = std::get_if<Allow>(&o)) {
    hw_write(a->pa, 0, std::span(data));
  } else if (is_abort(o)) {
    ++discarded_writes_;
  }
  return o;
}

AccessOutcome Machine::read_bytes(CpuId cpu, VirtPage va, std::size_t offset,
                                  std::span<std::uint8_t> out) {
  AccessOutcome o = translate({cpu, va, AccessKind::Read});
  if (const auto* a = std::get_if<Allow>(&o);
      a && offset + out.size() <= kPageBytes) {
    std::memcpy(out.data(), mem_[a->pa].data() + offset, out.size());
  } else {
    std::memset(out.data(), 0xFF, out.size());
  }
  return o;
}

AccessOutcome Machine::write_bytes(CpuId cpu, VirtPage va, std::size_t offset,
                                   std::span<const std::uint8_t> data) {
  AccessOutcome o = translate({cpu, va, AccessKind::Write});
  if (const auto* a = std::get_if<Allow>(&o);
      a && offset + data.size() <= kPageBytes) {
    hw_write(a->pa, offset, data);
  } else if (is_abort(o)) {
    ++discarded_writes_;
  }
  return o;
}

void Machine::trace_access(CpuId cpu, VirtPage va, AccessKind kind,
                           const AccessOutcome& o) {
  if (!trace_) return;
  const Cpu& c = cpus_.at(cpu);
  nlohmann::ordered_json j = {
      {"cpu", cpu},
      {"mode", c.mode ? nlohmann::ordered_json(*c.mode)
                      : nlohmann::ordered_json(nullptr)},
      {"va", va},
      {"kind", access_kind_name(kind)},
      {"outcome", is_allow(o) ? "Allow" : (is_abort(o) ? "AbortPage" : "Fault")},
  };
  if (const auto* f = std::get_if<Fault>(&o)) {
    j["reason"] = fault_reason_name(f->reason);
  }
  trace_(j.dump());
}

}  // namespace sboxsim
