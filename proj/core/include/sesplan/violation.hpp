#ifndef SESPLAN_VIOLATION_HPP
#define SESPLAN_VIOLATION_HPP

#include <string>

namespace sesplan {

enum class ViolationKind { Voltage, LineLoading, Generation, Soc };

/// One operating-limit excursion. magnitude is the excess beyond the bound
/// (pu for voltage and SOC, kVA otherwise) and is strictly positive.
struct LimitViolation {
    ViolationKind kind;
    double magnitude;
    std::string location;
};

const char* violation_kind_name(ViolationKind k);

}  // namespace sesplan

#endif  // SESPLAN_VIOLATION_HPP
