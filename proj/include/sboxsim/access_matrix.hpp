#pragma once

#include <string>
#include <vector>

#include "sboxsim/machine.hpp"

namespace sboxsim {

struct ScaleError {
  std::string reason;
};

// One probed cell: what the guard said and what the independently derived
// rule says it should have said.
struct MatrixCell {
  VirtPage va = 0;
  AccessKind kind = AccessKind::Read;
  AccessOutcome actual;
  AccessOutcome expected;
  bool agree = false;
};

struct MatrixRow {
  std::string actor;                     // "os:<process>" or "enclave:<id>"
  std::optional<EnclaveId> enclave;      // nullopt for the OS rows
  ProcessId process = 0;
  std::vector<MatrixCell> cells;
};

struct AccessMatrix {
  std::vector<MatrixRow> rows;
  std::uint64_t disagreements = 0;

  bool agrees() const { return disagreements == 0; }
  // Set of enclave ids for which any access to `pa` is allowed.
  std::vector<EnclaveId> allowed_enclaves(const Machine& m, PhysPage pa) const;
};

// Ground-truth rule for a single access, derived directly from EPCM, SECS
// and page-table state. Independent of Machine::decide by construction:
// nothing here calls into the guard.
AccessOutcome expected_access(const Machine& m, std::optional<EnclaveId> actor,
                              ProcessId process, VirtPage va, AccessKind kind);

// Enumerates every (actor, va, kind) triple on a small machine, probing the
// guard and the independent rule. Throws ScaleError beyond 4 enclaves or a
// 64-page virtual space.
AccessMatrix access_matrix_oracle(Machine& m);

}  // namespace sboxsim
