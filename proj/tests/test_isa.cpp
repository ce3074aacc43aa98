#include <random>

#include "doctest.h"
#include "sboxsim/machine.hpp"

using namespace sboxsim;

namespace {

MachineConfig cfg4() {
  return {.phys_pages = 256, .epc_pages = 96, .cpus = 2, .va_pages = 64};
}

EnclaveImage image_of(ProcessId process, VirtPage base, std::uint64_t len,
                      std::vector<EnclaveImagePage> pages) {
  EnclaveImage img;
  img.process = process;
  img.elrange_base = base;
  img.elrange_len = len;
  img.pages = std::move(pages);
  return img;
}

EnclaveId create_ok(Machine& m, const EnclaveImage& img, EnclaveKind kind) {
  auto r = m.ecreate_add_init(img, kind);
  REQUIRE(std::holds_alternative<EnclaveId>(r));
  return std::get<EnclaveId>(r);
}

std::vector<std::uint8_t> bytes(std::initializer_list<std::uint8_t> v) {
  return std::vector<std::uint8_t>(v);
}

}  // namespace

TEST_SUITE("isa") {

TEST_CASE("create consumes image pages plus secs plus ssa") {
  Machine m(cfg4());
  const EnclaveImage img = image_of(1, 8, 8,
                                    {{8, bytes({1}), kPermRW},
                                     {9, bytes({2}), kPermRX},
                                     {10, bytes({3}), kPermRW},
                                     {11, bytes({4}), kPermRW}});
  EnclaveId id = create_ok(m, img, EnclaveKind::Normal);
  const Secs* s = m.find_enclave(id);
  REQUIRE(s);
  CHECK_FALSE(s->bi_enclave);
  CHECK(s->initialized);
  std::uint64_t valid = 0;
  for (std::uint64_t i = 0; i < m.epcm_entry_count(); ++i) {
    if (m.epcm(m.epc_base() + i).valid) ++valid;
  }
  CHECK(valid == 4 + 2);  // image pages + SECS + SSA save area
}

TEST_CASE("creation error paths") {
  Machine m(cfg4());
  const EnclaveImage img =
      image_of(1, 8, 4, {{8, bytes({1}), kPermRW}, {9, bytes({2}), kPermRX}});
  create_ok(m, img, EnclaveKind::Normal);
  // Same process, overlapping ELRANGE.
  CHECK(std::get<IsaErr>(m.ecreate_add_init(img, EnclaveKind::Normal)) ==
        IsaErr::OverlapError);
  // ELRANGE too small for pages + save area.
  auto tight = image_of(2, 8, 2,
                        {{8, bytes({1}), kPermRW}, {9, bytes({2}), kPermRW}});
  CHECK(std::holds_alternative<IsaErr>(
      m.ecreate_add_init(tight, EnclaveKind::Normal)));
  // Exhaust the EPC.
  Machine tiny({.phys_pages = 64, .epc_pages = 4, .cpus = 1, .va_pages = 64});
  auto big = image_of(1, 8, 8,
                      {{8, bytes({1}), kPermRW},
                       {9, bytes({2}), kPermRW},
                       {10, bytes({3}), kPermRW},
                       {11, bytes({4}), kPermRW}});
  CHECK(std::get<IsaErr>(tiny.ecreate_add_init(big, EnclaveKind::Normal)) ==
        IsaErr::OutOfEpc);
}

TEST_CASE("measurement is a pure function of contents, position, and kind") {
  Machine m(cfg4());
  auto pages = [] {
    return std::vector<EnclaveImagePage>{{8, bytes({0xAA}), kPermRW},
                                         {9, bytes({0xBB}), kPermRX}};
  };
  EnclaveId a = create_ok(m, image_of(1, 8, 4, pages()), EnclaveKind::Normal);
  EnclaveId b = create_ok(m, image_of(2, 8, 4, pages()), EnclaveKind::Normal);
  CHECK(m.find_enclave(a)->mrenclave == m.find_enclave(b)->mrenclave);

  // Same contents at swapped positions.
  EnclaveId c = create_ok(m,
                          image_of(3, 8, 4,
                                   {{9, bytes({0xAA}), kPermRW},
                                    {8, bytes({0xBB}), kPermRX}}),
                          EnclaveKind::Normal);
  CHECK(m.find_enclave(c)->mrenclave != m.find_enclave(a)->mrenclave);

  // Same image, different kind flag.
  EnclaveId d = create_ok(m, image_of(4, 8, 4, pages()),
                          EnclaveKind::BiEnclave);
  CHECK(m.find_enclave(d)->mrenclave != m.find_enclave(a)->mrenclave);

  // Same image, different perms.
  EnclaveId e = create_ok(m,
                          image_of(5, 8, 4,
                                   {{8, bytes({0xAA}), kPermRWX},
                                    {9, bytes({0xBB}), kPermRX}}),
                          EnclaveKind::Normal);
  CHECK(m.find_enclave(e)->mrenclave != m.find_enclave(a)->mrenclave);
}

TEST_CASE("eenter and eexit for normal and confined enclaves") {
  Machine m(cfg4());
  EnclaveId normal = create_ok(
      m, image_of(1, 8, 4, {{8, bytes({1}), kPermRW}}), EnclaveKind::Normal);
  EnclaveId bi = create_ok(
      m, image_of(2, 8, 4, {{8, bytes({1}), kPermRW}}), EnclaveKind::BiEnclave);

  CHECK(m.eexit(0) == IsaErr::NotInEnclave);
  CHECK(m.eenter(0, 999) == IsaErr::NotInitialized);

  REQUIRE(m.eenter(0, normal) == IsaErr::Ok);
  CHECK(m.cpu(0).tlb.empty());
  CHECK(m.eenter(0, normal) == IsaErr::AlreadyInEnclave);
  CHECK(m.eexit(0) == IsaErr::Ok);
  CHECK_FALSE(m.cpu(0).mode.has_value());
  // Normal enclaves re-enter freely.
  CHECK(m.eenter(0, normal) == IsaErr::Ok);
  CHECK(m.eexit(0) == IsaErr::Ok);

  REQUIRE(m.eenter(0, bi) == IsaErr::Ok);
  CHECK(m.eexit(0) == IsaErr::BiEnclaveEscapeFault);
  CHECK(m.cpu(0).mode == Mode{bi});  // still confined
  // One inbound entry total: a second EENTER is refused even from cpu1.
  CHECK(m.eenter(1, bi) == IsaErr::AlreadyLaunched);
}

TEST_CASE("aex round-trips the context and hides the save area") {
  Machine m(cfg4());
  EnclaveId bi = create_ok(
      m, image_of(1, 8, 4, {{8, bytes({1}), kPermRW}}), EnclaveKind::BiEnclave);
  CHECK(m.aex(0) == IsaErr::NotInEnclave);
  REQUIRE(m.eenter(0, bi) == IsaErr::Ok);
  CpuState saved;
  for (std::size_t i = 0; i < saved.regs.size(); ++i) saved.regs[i] = i * 17 + 1;
  saved.pc = 0xDEAD;
  m.cpu_mut(0).state = saved;

  REQUIRE(m.aex(0) == IsaErr::Ok);
  CHECK_FALSE(m.cpu(0).mode.has_value());
  CHECK(m.cpu(0).state == CpuState{});  // transient context erased

  // The save area (last ELRANGE slot) reads as the abort value from outside.
  m.schedule(0, 1);
  std::array<std::uint8_t, 32> buf{};
  CHECK(is_abort(m.read_bytes(0, 11, 0, std::span(buf))));
  for (std::uint8_t v : buf) CHECK(v == 0xFF);
  // Untrusted overwrite attempts are discarded, so the round-trip holds.
  buf.fill(0);
  CHECK(is_abort(m.write_bytes(0, 11, 0, std::span(buf))));

  CHECK(m.eresume(0, bi) == IsaErr::Ok);
  CHECK(m.cpu(0).state == saved);
  CHECK(m.cpu(0).mode == Mode{bi});
}

TEST_CASE("eresume requires a matching saved context") {
  Machine m(cfg4());
  EnclaveId a = create_ok(
      m, image_of(1, 8, 4, {{8, bytes({1}), kPermRW}}), EnclaveKind::BiEnclave);
  EnclaveId b = create_ok(
      m, image_of(2, 8, 4, {{8, bytes({1}), kPermRW}}), EnclaveKind::Normal);
  CHECK(m.eresume(0, a) == IsaErr::NoSavedContext);
  REQUIRE(m.eenter(0, a) == IsaErr::Ok);
  REQUIRE(m.aex(0) == IsaErr::Ok);
  CHECK(m.eresume(0, b) == IsaErr::NoSavedContext);
  CHECK(m.eresume(0, a) == IsaErr::Ok);
}

TEST_CASE("share handshake lifecycle") {
  Machine m(cfg4());
  EnclaveId owner = create_ok(
      m, image_of(1, 8, 4, {{8, bytes({0x55, 0x66}), kPermRW}}),
      EnclaveKind::BiEnclave);
  EnclaveId peer = create_ok(
      m, image_of(2, 8, 4, {{8, bytes({1}), kPermRW}}), EnclaveKind::Monitor);
  EnclaveId third = create_ok(
      m, image_of(3, 8, 4, {{8, bytes({1}), kPermRW}}), EnclaveKind::Normal);
  const PhysPage page = m.page_tables().at(1).at(8).pa;

  REQUIRE(m.eenter(0, owner) == IsaErr::Ok);

  CHECK(m.esadd(0, page, owner) == IsaErr::UnknownCoOwner);  // self-share
  CHECK(m.esadd(0, page, 999) == IsaErr::UnknownCoOwner);

  // Owner keeps a warm translation; the share must shoot it down.
  REQUIRE(is_allow(m.translate({0, 8, AccessKind::Read})));
  REQUIRE(m.esadd(0, page, peer) == IsaErr::Ok);
  for (std::uint8_t v : m.raw_page(page)) CHECK(v == 0);
  CHECK(m.epcm(page).kind == PageKind::SharePending);
  CHECK(is_fault(m.translate({0, 8, AccessKind::Read}),
                 FaultReason::SharePendingBlocked));
  CHECK(m.esadd(0, page, peer) == IsaErr::PendingExists);

  // Wrong acceptor, then the named one.
  REQUIRE(m.eenter(1, third) == IsaErr::Ok);
  CHECK(m.esaccept(1, page) == IsaErr::WrongAcceptor);
  REQUIRE(m.eexit(1) == IsaErr::Ok);
  REQUIRE(m.eenter(1, peer) == IsaErr::Ok);
  CHECK(m.esaccept(1, page) == IsaErr::Ok);
  CHECK(m.epcm(page).kind == PageKind::Regular);
  REQUIRE(m.epcm(page).co_owner_secs.has_value());
  CHECK(*m.epcm(page).co_owner_secs == m.find_enclave(peer)->secs_page);

  // Both parties reach the page through their own mapping.
  m.os_map_page(2, 8, page, kPermRW);
  CHECK(is_allow(m.translate({0, 8, AccessKind::Read})));
  CHECK(is_allow(m.translate({1, 8, AccessKind::Read})));

  CHECK(m.esadd(0, page, third) == IsaErr::AlreadyShared);

  // Teardown zeroes and returns the page to its owner alone.
  std::array<std::uint8_t, 4> data{9, 9, 9, 9};
  REQUIRE(is_allow(m.write_bytes(0, 8, 0, std::span(data))));
  REQUIRE(m.destroy_share(page) == IsaErr::Ok);
  for (std::uint8_t v : m.raw_page(page)) CHECK(v == 0);
  CHECK_FALSE(m.epcm(page).co_owner_secs.has_value());
  CHECK(is_allow(m.translate({0, 8, AccessKind::Read})));
  CHECK(is_fault(m.translate({1, 8, AccessKind::Read}),
                 FaultReason::EpcmOwnerMismatch));
}

TEST_CASE("esadd requires enclave mode and ownership") {
  Machine m(cfg4());
  EnclaveId a = create_ok(
      m, image_of(1, 8, 4, {{8, bytes({1}), kPermRW}}), EnclaveKind::BiEnclave);
  EnclaveId b = create_ok(
      m, image_of(2, 8, 4, {{8, bytes({1}), kPermRW}}), EnclaveKind::BiEnclave);
  const PhysPage page_a = m.page_tables().at(1).at(8).pa;
  CHECK(m.esadd(0, page_a, b) == IsaErr::NotInEnclave);
  CHECK(m.esaccept(0, page_a) == IsaErr::NotInEnclave);
  REQUIRE(m.eenter(0, b) == IsaErr::Ok);
  CHECK(m.esadd(0, page_a, a) == IsaErr::NotOwner);
  CHECK(m.esaccept(0, page_a) == IsaErr::NoPendingShare);
}

TEST_CASE("esaccept shoots down stale translations on other cpus") {
  Machine m(cfg4());
  EnclaveId owner = create_ok(
      m, image_of(1, 8, 4, {{8, bytes({1}), kPermRW}}), EnclaveKind::BiEnclave);
  EnclaveId peer = create_ok(
      m, image_of(2, 8, 4, {{8, bytes({1}), kPermRW}}), EnclaveKind::Monitor);
  const PhysPage page = m.page_tables().at(1).at(8).pa;
  REQUIRE(m.eenter(0, owner) == IsaErr::Ok);
  REQUIRE(m.eenter(1, peer) == IsaErr::Ok);
  REQUIRE(m.esadd(0, page, peer) == IsaErr::Ok);
  // cpu0 retains unrelated entries; shared-page entries were shot down.
  for (const TlbEntry& e : m.cpu(0).tlb) CHECK(e.pa != page);
  REQUIRE(m.esaccept(1, page) == IsaErr::Ok);
  for (CpuId cpu : {CpuId{0}, CpuId{1}}) {
    for (const TlbEntry& e : m.cpu(cpu).tlb) CHECK(e.pa != page);
  }
  CHECK(m.tlb_sound());
}

TEST_CASE("no instruction sequence leaves a confined enclave except aex") {
  Machine m(cfg4());
  EnclaveId bi = create_ok(
      m, image_of(1, 8, 4, {{8, bytes({1}), kPermRW}}), EnclaveKind::BiEnclave);
  EnclaveId normal = create_ok(
      m, image_of(2, 8, 4, {{8, bytes({1}), kPermRW}}), EnclaveKind::Normal);

  std::mt19937_64 rng(0x5eed);
  const Secs* bi_secs = m.find_enclave(bi);
  for (int step = 0; step < 100000; ++step) {
    const CpuId cpu = rng() % 2;
    const bool was_bi = m.cpu(cpu).mode == Mode{bi};
    const int op = rng() % 5;
    bool did_aex = false;
    switch (op) {
      case 0: m.eenter(cpu, rng() % 2 ? bi : normal); break;
      case 1: m.eexit(cpu); break;
      case 2: did_aex = m.aex(cpu) == IsaErr::Ok; break;
      case 3: m.eresume(cpu, rng() % 2 ? bi : normal); break;
      case 4: m.schedule(cpu, rng() % 3); break;
    }
    const bool is_bi = m.cpu(cpu).mode == Mode{bi};
    if (was_bi && !is_bi) {
      REQUIRE(did_aex);  // the only sanctioned way out
    }
    if (step % 1000 == 0) REQUIRE(m.tlb_sound());
  }
  (void)bi_secs;
}

}  // TEST_SUITE
