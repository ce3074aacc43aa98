#include "doctest.h"
#include "sboxsim/machine.hpp"

using namespace sboxsim;

namespace {

MachineConfig small_cfg() {
  return {.phys_pages = 192, .epc_pages = 64, .cpus = 2, .va_pages = 64};
}

}  // namespace

TEST_SUITE("machine") {

TEST_CASE("construction sizes the epcm and prm partition") {
  Machine m({.phys_pages = 16384, .epc_pages = 8192, .cpus = 1,
             .va_pages = 64});
  CHECK(m.epcm_entry_count() == 8192);
  // 8192 entries at 64 bytes each need 128 metadata pages ahead of the EPC.
  CHECK(m.epc_base() == 128);
  CHECK(m.prm_pages() == 128 + 8192);
  for (std::uint64_t i = 0; i < m.epcm_entry_count(); ++i) {
    CHECK_FALSE(m.epcm(m.epc_base() + i).valid);
  }
}

TEST_CASE("degenerate configs are rejected") {
  CHECK_THROWS_AS(Machine({.phys_pages = 16384, .epc_pages = 0, .cpus = 1,
                           .va_pages = 64}),
                  ConfigError);
  CHECK_THROWS_AS(Machine({.phys_pages = 1024, .epc_pages = 2048, .cpus = 1,
                           .va_pages = 64}),
                  ConfigError);
  CHECK_THROWS_AS(Machine({.phys_pages = 1024, .epc_pages = 64, .cpus = 0,
                           .va_pages = 64}),
                  ConfigError);
  CHECK_THROWS_AS(Machine({.phys_pages = 1024, .epc_pages = 64, .cpus = 1,
                           .va_pages = 0}),
                  ConfigError);
}

TEST_CASE("machine config parses from json") {
  MachineConfig cfg = machine_config_from_json(
      R"({"phys_pages":192,"epc_pages":64,"cpus":2,"va_pages":64})");
  CHECK(cfg == small_cfg());
}

TEST_CASE("construction is deterministic") {
  Machine a(small_cfg()), b(small_cfg());
  CHECK(a.dump_json() == b.dump_json());
}

TEST_CASE("os mapping of ordinary dram allows untrusted access") {
  Machine m(small_cfg());
  const PhysPage dram = m.prm_pages() + 5;
  m.os_map_page(1, 40, dram, kPermRW);
  m.schedule(0, 1);
  auto out = m.translate({0, 40, AccessKind::Read});
  REQUIRE(is_allow(out));
  CHECK(std::get<Allow>(out).pa == dram);
}

TEST_CASE("remap invalidates the stale translation") {
  Machine m(small_cfg());
  const PhysPage a = m.prm_pages() + 5;
  const PhysPage b = m.prm_pages() + 6;
  m.schedule(0, 1);
  m.os_map_page(1, 40, a, kPermRW);
  REQUIRE(is_allow(m.translate({0, 40, AccessKind::Read})));
  m.os_map_page(1, 40, b, kPermRW);
  auto out = m.translate({0, 40, AccessKind::Read});
  REQUIRE(is_allow(out));
  CHECK(std::get<Allow>(out).pa == b);
}

TEST_CASE("per-cpu flush leaves the other cpu's entries resident") {
  Machine m(small_cfg());
  const PhysPage dram = m.prm_pages() + 5;
  m.os_map_page(1, 40, dram, kPermRW);
  m.schedule(0, 1);
  m.schedule(1, 1);
  REQUIRE(is_allow(m.translate({0, 40, AccessKind::Read})));
  REQUIRE(is_allow(m.translate({1, 40, AccessKind::Read})));
  REQUIRE_FALSE(m.cpu(0).tlb.empty());
  REQUIRE_FALSE(m.cpu(1).tlb.empty());
  m.tlb_flush(0);
  CHECK(m.cpu(0).tlb.empty());
  CHECK_FALSE(m.cpu(1).tlb.empty());
  m.tlb_flush(0);  // flushing an empty TLB is a no-op
  CHECK(m.cpu(0).tlb.empty());
}

TEST_CASE("prm is opaque to untrusted software") {
  Machine m(small_cfg());
  m.schedule(0, 1);
  // Map both a metadata page and an EPC page; neither may be observable.
  for (PhysPage target : {PhysPage{0}, m.epc_base() + 3}) {
    m.os_map_page(1, 40, target, kPermRWX);
    CHECK(is_abort(m.translate({0, 40, AccessKind::Read})));
    std::array<std::uint8_t, 16> buf{};
    CHECK(is_abort(m.read_bytes(0, 40, 0, std::span(buf))));
    for (std::uint8_t v : buf) CHECK(v == 0xFF);
    const std::uint64_t before = m.discarded_write_count();
    buf.fill(0x42);
    CHECK(is_abort(m.write_bytes(0, 40, 0, std::span(buf))));
    CHECK(m.discarded_write_count() == before + 1);
    CHECK(is_abort(m.translate({0, 40, AccessKind::Execute})));
  }
}

TEST_CASE("direct dram tampering of prm breaks the page's integrity tag") {
  Machine m(small_cfg());
  const PhysPage meta = 0;
  CHECK(m.prm_page_intact(meta));
  m.adversary_dram_flip_bit(meta, 17, 2);
  CHECK_FALSE(m.prm_page_intact(meta));
  m.adversary_dram_flip_bit(meta, 17, 2);  // flip back restores the tag
  CHECK(m.prm_page_intact(meta));
}

#ifdef SBOXSIM_ABLATIONS
TEST_CASE("ablation flags are honored in this build") {
  AblationFlags f;
  f.owner_check = false;
  Machine m(small_cfg(), f);
  CHECK_FALSE(m.ablations().owner_check);
}
#endif

}  // TEST_SUITE
