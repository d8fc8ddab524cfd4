// Architectural audit probe: orchestrator-side code attempting to read
// record-level data out of a silo. This translation unit MUST NOT compile.
#include "silobench/data_model.hpp"

using namespace silobench;

const StudentRecord& leak(const InstitutionSilo& silo) {
  return silo.records({})[0];
}
