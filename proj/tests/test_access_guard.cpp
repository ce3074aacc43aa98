#include "doctest.h"
#include "sboxsim/access_matrix.hpp"
#include "sboxsim/fixture.hpp"
#include "sboxsim/machine.hpp"

using namespace sboxsim;

TEST_SUITE("access-guard") {

TEST_CASE("confined enclaves cannot touch memory outside their elrange") {
  Fixture fx = make_default_fixture();
  Machine& m = *fx.machine;
  // Ordinary DRAM is mapped RWX at the scratch va in every process.
  CHECK(is_abort(m.translate({fx.cpu_attacker, fx.va("scratch"),
                              AccessKind::Read})));
  CHECK(is_abort(m.translate({fx.cpu_victim, fx.va("scratch"),
                              AccessKind::Write})));
  // The monitor is not bi-confined; the same access succeeds.
  auto out = m.translate({fx.cpu_monitor, fx.va("scratch"), AccessKind::Read});
  REQUIRE(is_allow(out));
  CHECK(std::get<Allow>(out).pa == kFixtureDramPage);
}

TEST_CASE("co-owned page is reachable from both sides and nobody else") {
  Fixture fx = make_default_fixture();
  Machine& m = *fx.machine;
  const VirtPage va = fx.va("channel");
  auto v = m.translate({fx.cpu_victim, va, AccessKind::Read});
  auto mon = m.translate({fx.cpu_monitor, va, AccessKind::Write});
  REQUIRE(is_allow(v));
  REQUIRE(is_allow(mon));
  CHECK(std::get<Allow>(v).pa == fx.page("channel"));
  CHECK(std::get<Allow>(mon).pa == fx.page("channel"));
  // The OS maps the page into the attacker's space at the same va; the
  // EPCM owner pair does not include the attacker.
  m.os_map_page(fx.proc_attacker, va, fx.page("channel"), kPermRW);
  CHECK(is_fault(m.translate({fx.cpu_attacker, va, AccessKind::Read}),
                 FaultReason::EpcmOwnerMismatch));
}

TEST_CASE("forged page tables cannot cross enclave boundaries") {
  Fixture fx = make_default_fixture();
  Machine& m = *fx.machine;
  // Point the attacker's in-range va at a victim page whose recorded va
  // matches exactly; only the owner check stands in the way.
  m.os_map_page(fx.proc_attacker, 8, fx.page("victim_data"), kPermRW);
  CHECK(is_fault(m.translate({fx.cpu_attacker, 8, AccessKind::Read}),
                 FaultReason::EpcmOwnerMismatch));
}

TEST_CASE("remapping within one enclave is caught by the recorded va") {
  Fixture fx = make_default_fixture();
  Machine& m = *fx.machine;
  m.os_map_page(fx.proc_attacker, 8, fx.page("attacker_code"), kPermRW);
  CHECK(is_fault(m.translate({fx.cpu_attacker, 8, AccessKind::Read}),
                 FaultReason::VaMismatch));
}

TEST_CASE("secs pages are never addressable") {
  Fixture fx = make_default_fixture();
  Machine& m = *fx.machine;
  const PhysPage secs = m.find_enclave(fx.attacker)->secs_page;
  m.os_map_page(fx.proc_attacker, 8, secs, kPermRW);
  CHECK(is_fault(m.translate({fx.cpu_attacker, 8, AccessKind::Read}),
                 FaultReason::ElrangeMismatch));
}

TEST_CASE("unmapped elrange va faults as an elrange mismatch") {
  Fixture fx = make_default_fixture();
  Machine& m = *fx.machine;
  // va 11 is inside every ELRANGE but mapped in no fixture process, so no
  // page-table entry lands in the EPC.
  CHECK(is_fault(m.translate({fx.cpu_attacker, 11, AccessKind::Read}),
                 FaultReason::ElrangeMismatch));
}

TEST_CASE("epcm permissions bound enclave accesses") {
  Fixture fx = make_default_fixture();
  Machine& m = *fx.machine;
  const VirtPage code = fx.va("elrange_code");  // RX page
  CHECK(is_allow(m.translate({fx.cpu_victim, code, AccessKind::Read})));
  CHECK(is_allow(m.translate({fx.cpu_victim, code, AccessKind::Execute})));
  CHECK(is_fault(m.translate({fx.cpu_victim, code, AccessKind::Write}),
                 FaultReason::PermDenied));
  // Data pages are RW, never executable.
  CHECK(is_fault(m.translate({fx.cpu_victim, fx.va("elrange_data"),
                              AccessKind::Execute}),
                 FaultReason::PermDenied));
}

TEST_CASE("repeat accesses hit the tlb with an identical answer") {
  Fixture fx = make_default_fixture();
  Machine& m = *fx.machine;
  auto first = m.translate({fx.cpu_victim, 8, AccessKind::Read});
  REQUIRE(is_allow(first));
  CHECK(std::get<Allow>(first).tlb_fill);
  auto second = m.translate({fx.cpu_victim, 8, AccessKind::Read});
  REQUIRE(is_allow(second));
  CHECK_FALSE(std::get<Allow>(second).tlb_fill);
  CHECK(std::get<Allow>(second).pa == std::get<Allow>(first).pa);
  CHECK(m.tlb_sound());
}

TEST_CASE("guard agrees with the independently derived matrix") {
  Fixture fx = make_default_fixture();
  AccessMatrix matrix = access_matrix_oracle(*fx.machine);
  CHECK(matrix.agrees());
  // Exactly the two channel endpoints may reach the shared page.
  auto allowed = matrix.allowed_enclaves(*fx.machine, fx.page("channel"));
  REQUIRE(allowed.size() == 2);
  CHECK(allowed[0] == fx.victim);
  CHECK(allowed[1] == fx.monitor);
  // Private pages stay single-owner.
  auto priv = matrix.allowed_enclaves(*fx.machine, fx.page("victim_data"));
  REQUIRE(priv.size() == 1);
  CHECK(priv[0] == fx.victim);
}

TEST_CASE("without shares the matrix is block-diagonal") {
  Machine m({.phys_pages = 192, .epc_pages = 64, .cpus = 3, .va_pages = 64});
  EnclaveImage a, b;
  a.process = 1;
  a.elrange_base = 8;
  a.elrange_len = 4;
  a.pages = {{8, {1, 2, 3}, kPermRW}};
  b = a;
  b.process = 2;
  EnclaveId ea = std::get<EnclaveId>(m.ecreate_add_init(a, EnclaveKind::Normal));
  EnclaveId eb = std::get<EnclaveId>(m.ecreate_add_init(b, EnclaveKind::Normal));
  REQUIRE(m.eenter(0, ea) == IsaErr::Ok);
  REQUIRE(m.eenter(1, eb) == IsaErr::Ok);
  m.schedule(2, 1);

  AccessMatrix matrix = access_matrix_oracle(m);
  CHECK(matrix.agrees());
  for (const MatrixRow& row : matrix.rows) {
    for (const MatrixCell& cell : row.cells) {
      const auto* allow = std::get_if<Allow>(&cell.actual);
      if (!allow || !m.in_epc(allow->pa)) continue;
      // Any allowed EPC access must come from the page's own enclave.
      REQUIRE(row.enclave.has_value());
      CHECK(m.epcm(allow->pa).owner_secs ==
            m.find_enclave(*row.enclave)->secs_page);
    }
    if (!row.enclave) {
      for (const MatrixCell& cell : row.cells) {
        const auto* allow = std::get_if<Allow>(&cell.actual);
        if (allow) CHECK_FALSE(m.in_epc(allow->pa));
      }
    }
  }
}

TEST_CASE("matrix enumeration refuses oversized machines") {
  Machine m({.phys_pages = 512, .epc_pages = 64, .cpus = 1, .va_pages = 128});
  CHECK_THROWS_AS(access_matrix_oracle(m), ScaleError);
}

}  // TEST_SUITE
