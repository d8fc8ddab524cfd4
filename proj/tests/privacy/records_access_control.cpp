// Control probe for the audit: same includes and shape, but confined to the
// public aggregate surface. This translation unit MUST compile.
#include "silobench/data_model.hpp"

using namespace silobench;

std::size_t fine(const InstitutionSilo& silo) {
  return silo.record_count() + silo.group_sizes({}, true).size();
}
