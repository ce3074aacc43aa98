#include <cstring>

#include "sboxsim/crypto.hpp"
#include "sboxsim/machine.hpp"

namespace sboxsim {

namespace {

void put_le64(std::uint8_t* out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out[i] = static_cast<std::uint8_t>(v >> (8 * i));
}

// Serialized CpuState layout in the SSA page: 16 regs then pc, little-endian.
constexpr std::size_t kSsaBytes = 17 * 8;

void serialize_state(const CpuState& s, std::uint8_t* out) {
  for (std::size_t i = 0; i < s.regs.size(); ++i) put_le64(out + i * 8, s.regs[i]);
  put_le64(out + 16 * 8, s.pc);
}

std::uint64_t get_le64(const std::uint8_t* in) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | in[i];
  return v;
}

CpuState deserialize_state(const std::uint8_t* in) {
  CpuState s;
  for (std::size_t i = 0; i < s.regs.size(); ++i) s.regs[i] = get_le64(in + i * 8);
  s.pc = get_le64(in + 16 * 8);
  return s;
}

}  // namespace

std::variant<EnclaveId, IsaErr> Machine::ecreate_add_init(
    const EnclaveImage& image, EnclaveKind kind) {
  // The last ELRANGE slot is reserved for the SSA page.
  if (image.elrange_len < image.pages.size() + 1) return IsaErr::BadArgument;
  if (image.elrange_base + image.elrange_len > cfg_.va_pages) {
    return IsaErr::BadArgument;
  }
  const VirtPage ssa_va = image.elrange_base + image.elrange_len - 1;
  for (std::size_t i = 0; i < image.pages.size(); ++i) {
    const auto& p = image.pages[i];
    if (p.va < image.elrange_base || p.va >= ssa_va) return IsaErr::BadArgument;
    if (p.content.size() > kPageBytes) return IsaErr::BadArgument;
    for (std::size_t k = 0; k < i; ++k) {
      if (image.pages[k].va == p.va) return IsaErr::BadArgument;
    }
  }
  for (const auto& [id, s] : enclaves_) {
    if (s.process != image.process) continue;
    const bool disjoint =
        image.elrange_base + image.elrange_len <= s.elrange_base ||
        s.elrange_base + s.elrange_len <= image.elrange_base;
    if (!disjoint) return IsaErr::OverlapError;
  }

  std::uint64_t free_pages = 0;
  for (const EpcmEntry& e : epcm_) free_pages += e.valid ? 0 : 1;
  if (free_pages < image.pages.size() + 2) return IsaErr::OutOfEpc;

  Secs secs;
  secs.id = next_enclave_id_++;
  secs.elrange_base = image.elrange_base;
  secs.elrange_len = image.elrange_len;
  secs.process = image.process;
  secs.kind = kind;
  secs.secs_page = *alloc_epc_page();
  epcm_[epcm_index(secs.secs_page)] = EpcmEntry{
      .valid = true,
      .owner_secs = secs.secs_page,
      .co_owner_secs = std::nullopt,
      .mapped_va = 0,
      .kind = PageKind::SecsPage,
      .perms = 0,
  };

  // EADD + EEXTEND: measurement covers position within ELRANGE, permission
  // and kind bytes, then the full page content.
  crypto::Sha256 measure;
  for (const auto& p : image.pages) {
    PhysPage pa = *alloc_epc_page();
    Page content{};
    std::memcpy(content.data(), p.content.data(), p.content.size());
    hw_write(pa, 0, std::span(content));
    epcm_[epcm_index(pa)] = EpcmEntry{
        .valid = true,
        .owner_secs = secs.secs_page,
        .co_owner_secs = std::nullopt,
        .mapped_va = p.va,
        .kind = PageKind::Regular,
        .perms = p.perms,
    };
    std::array<std::uint8_t, 10> rec{};
    put_le64(rec.data(), p.va - image.elrange_base);
    rec[8] = p.perms;
    rec[9] = static_cast<std::uint8_t>(PageKind::Regular);
    measure.update(std::span(rec));
    measure.update(std::span(content));
    os_map_page(image.process, p.va, pa, p.perms);
  }

  secs.ssa_page = *alloc_epc_page();
  epcm_[epcm_index(secs.ssa_page)] = EpcmEntry{
      .valid = true,
      .owner_secs = secs.secs_page,
      .co_owner_secs = std::nullopt,
      .mapped_va = ssa_va,
      .kind = PageKind::Regular,
      .perms = kPermRW,
  };
  os_map_page(image.process, ssa_va, secs.ssa_page, kPermRW);

  // EINIT: the kind flag is part of the identity.
  std::uint8_t flag = kind == EnclaveKind::BiEnclave ? 1 : 0;
  measure.update(std::span(&flag, 1));
  secs.mrenclave = measure.finish();
  secs.bi_enclave = kind == EnclaveKind::BiEnclave;
  secs.initialized = true;

  EnclaveId id = secs.id;
  enclaves_.emplace(id, std::move(secs));
  return id;
}

IsaErr Machine::eenter(CpuId cpu, EnclaveId id) {
  Cpu& c = cpus_.at(cpu);
  if (c.mode) return IsaErr::AlreadyInEnclave;
  auto it = enclaves_.find(id);
  if (it == enclaves_.end() || !it->second.initialized) {
    return IsaErr::NotInitialized;
  }
  Secs& s = it->second;
  if (s.bi_enclave && s.launched) return IsaErr::AlreadyLaunched;
  s.launched = true;
  tlb_flush(cpu);
  c.mode = id;
  return IsaErr::Ok;
}

IsaErr Machine::eexit(CpuId cpu) {
  Cpu& c = cpus_.at(cpu);
  Secs* s = enclave_of_mode(cpu);
  if (!s) return IsaErr::NotInEnclave;
  if (s->bi_enclave && ablate_.eexit_abort) {
    return IsaErr::BiEnclaveEscapeFault;  // mode unchanged
  }
  c.mode = std::nullopt;
  c.state = CpuState{};  // cleanse
  tlb_flush(cpu);
  return IsaErr::Ok;
}

IsaErr Machine::aex(CpuId cpu) {
  Cpu& c = cpus_.at(cpu);
  Secs* s = enclave_of_mode(cpu);
  if (!s) return IsaErr::NotInEnclave;
  std::array<std::uint8_t, kSsaBytes> ssa{};
  serialize_state(c.state, ssa.data());
  hw_write(s->ssa_page, 0, std::span(ssa));
  c.saved_ssa_for = s->id;
  c.state = CpuState{};  // erase transient context
  c.mode = std::nullopt;
  tlb_flush(cpu);
  return IsaErr::Ok;
}

IsaErr Machine::eresume(CpuId cpu, EnclaveId id) {
  Cpu& c = cpus_.at(cpu);
  if (c.mode) return IsaErr::AlreadyInEnclave;
  auto it = enclaves_.find(id);
  if (it == enclaves_.end() || !it->second.initialized) {
    return IsaErr::NotInitialized;
  }
  if (!c.saved_ssa_for || *c.saved_ssa_for != id) return IsaErr::NoSavedContext;
  c.state = deserialize_state(mem_.at(it->second.ssa_page).data());
  c.saved_ssa_for = std::nullopt;
  tlb_flush(cpu);
  c.mode = id;
  return IsaErr::Ok;
}

IsaErr Machine::esadd(CpuId cpu, PhysPage page, EnclaveId co_owner) {
  Secs* owner = enclave_of_mode(cpu);
  if (!owner) return IsaErr::NotInEnclave;
  if (!in_epc(page)) return IsaErr::NotOwner;
  EpcmEntry& e = epcm_[epcm_index(page)];
  if (!e.valid || e.kind == PageKind::SecsPage ||
      e.owner_secs != owner->secs_page) {
    return IsaErr::NotOwner;
  }
  if (e.co_owner_secs) return IsaErr::AlreadyShared;
  if (e.kind == PageKind::SharePending || pending_.contains(page)) {
    return IsaErr::PendingExists;
  }
  auto co = enclaves_.find(co_owner);
  if (co == enclaves_.end() || !co->second.initialized ||
      co_owner == owner->id) {
    return IsaErr::UnknownCoOwner;
  }
  hw_zero(page);
  e.kind = PageKind::SharePending;
  shootdown(page);
  pending_[page] = ShareRequest{owner->id, page, co_owner};
  return IsaErr::Ok;
}

IsaErr Machine::esaccept(CpuId cpu, PhysPage page) {
  Secs* acceptor = enclave_of_mode(cpu);
  if (!acceptor) return IsaErr::NotInEnclave;
  auto it = pending_.find(page);
  if (it == pending_.end()) return IsaErr::NoPendingShare;
  if (it->second.proposed_co_owner != acceptor->id) {
    return IsaErr::WrongAcceptor;
  }
  shootdown(page);
  EpcmEntry& e = epcm_[epcm_index(page)];
  e.co_owner_secs = acceptor->secs_page;  // fits: checked at construction
  e.kind = PageKind::Regular;
  pending_.erase(it);
  return IsaErr::Ok;
}

IsaErr Machine::destroy_share(PhysPage page) {
  if (!in_epc(page)) return IsaErr::BadArgument;
  EpcmEntry& e = epcm_[epcm_index(page)];
  if (!e.valid || e.kind == PageKind::SecsPage) return IsaErr::BadArgument;
  hw_zero(page);
  e.co_owner_secs = std::nullopt;
  e.kind = PageKind::Regular;
  shootdown(page);
  pending_.erase(page);
  return IsaErr::Ok;
}

}  // namespace sboxsim
