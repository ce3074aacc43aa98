#include "sboxsim/access_matrix.hpp"

#include <algorithm>

namespace sboxsim {

AccessOutcome expected_access(const Machine& m, std::optional<EnclaveId> actor,
                              ProcessId process, VirtPage va, AccessKind kind) {
  const auto& cfg = m.config();
  if (va >= cfg.va_pages) return Fault{FaultReason::VaMismatch};

  const Secs* enclave = actor ? m.find_enclave(*actor) : nullptr;
  if (enclave) process = enclave->process;

  const PteValue* pte = nullptr;
  auto pit = m.page_tables().find(process);
  if (pit != m.page_tables().end()) {
    auto vit = pit->second.find(va);
    if (vit != pit->second.end()) pte = &vit->second;
  }

  const std::uint8_t need = perm_bit(kind);

  if (!enclave) {
    if (!pte) return Fault{FaultReason::VaMismatch};
    if (m.in_prm(pte->pa)) return AbortPage{};
    if (!(pte->perms & need)) return Fault{FaultReason::PermDenied};
    return Allow{pte->pa, true};
  }

  const bool inside = va >= enclave->elrange_base &&
                      va < enclave->elrange_base + enclave->elrange_len;
  if (!inside) {
    if (enclave->bi_enclave) return AbortPage{};
    if (!pte) return Fault{FaultReason::VaMismatch};
    if (m.in_prm(pte->pa)) return AbortPage{};
    if (!(pte->perms & need)) return Fault{FaultReason::PermDenied};
    return Allow{pte->pa, true};
  }

  if (!pte || !m.in_epc(pte->pa)) return Fault{FaultReason::ElrangeMismatch};
  if (!m.prm_page_intact(m.epcm_meta_page_of(pte->pa))) {
    return Fault{FaultReason::IntegrityViolation};
  }
  const EpcmEntry& e = m.epcm(pte->pa);
  if (!e.valid || e.kind == PageKind::SecsPage) {
    return Fault{FaultReason::ElrangeMismatch};
  }
  const bool owner = e.owner_secs == enclave->secs_page;
  const bool co_owner =
      e.co_owner_secs && *e.co_owner_secs == enclave->secs_page;
  if (!owner && !co_owner) return Fault{FaultReason::EpcmOwnerMismatch};
  if (e.kind == PageKind::SharePending) {
    return Fault{FaultReason::SharePendingBlocked};
  }
  if (e.mapped_va != va) return Fault{FaultReason::VaMismatch};
  if (!(e.perms & need)) return Fault{FaultReason::PermDenied};
  if (!m.prm_page_intact(pte->pa)) {
    return Fault{FaultReason::IntegrityViolation};
  }
  return Allow{pte->pa, true};
}

namespace {

bool same_outcome(const AccessOutcome& a, const AccessOutcome& b) {
  if (is_allow(a) && is_allow(b)) {
    return std::get<Allow>(a).pa == std::get<Allow>(b).pa;
  }
  if (is_abort(a) && is_abort(b)) return true;
  const auto* fa = std::get_if<Fault>(&a);
  const auto* fb = std::get_if<Fault>(&b);
  return fa && fb && fa->reason == fb->reason;
}

}  // namespace

AccessMatrix access_matrix_oracle(Machine& m) {
  if (m.enclaves().size() > 4) {
    throw ScaleError{"oracle bound: at most 4 enclaves"};
  }
  if (m.config().va_pages > 64) {
    throw ScaleError{"oracle bound: at most 64 virtual pages"};
  }

  AccessMatrix matrix;

  // Probe through cpu 0, restoring its state afterwards.
  Cpu saved = m.cpu(0);
  auto probe_row = [&](MatrixRow row) {
    Cpu& c = m.cpu_mut(0);
    c.tlb.clear();
    c.mode = row.enclave;
    c.process = row.process;
    for (VirtPage va = 0; va < m.config().va_pages; ++va) {
      for (AccessKind k :
           {AccessKind::Read, AccessKind::Write, AccessKind::Execute}) {
        MatrixCell cell;
        cell.va = va;
        cell.kind = k;
        cell.actual = m.translate_probe(0, va, k);
        cell.expected = expected_access(m, row.enclave, row.process, va, k);
        cell.agree = same_outcome(cell.actual, cell.expected);
        if (!cell.agree) ++matrix.disagreements;
        row.cells.push_back(std::move(cell));
      }
    }
    matrix.rows.push_back(std::move(row));
  };

  for (const auto& [proc, table] : m.page_tables()) {
    MatrixRow row;
    row.actor = "os:" + std::to_string(proc);
    row.process = proc;
    probe_row(std::move(row));
  }
  for (const auto& [id, secs] : m.enclaves()) {
    MatrixRow row;
    row.actor = "enclave:" + std::to_string(id);
    row.enclave = id;
    row.process = secs.process;
    probe_row(std::move(row));
  }

  m.cpu_mut(0) = std::move(saved);
  return matrix;
}

std::vector<EnclaveId> AccessMatrix::allowed_enclaves(const Machine& m,
                                                      PhysPage pa) const {
  std::vector<EnclaveId> out;
  for (const MatrixRow& row : rows) {
    if (!row.enclave) continue;
    for (const MatrixCell& cell : row.cells) {
      const auto* a = std::get_if<Allow>(&cell.actual);
      if (a && a->pa == pa) {
        out.push_back(*row.enclave);
        break;
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace sboxsim
