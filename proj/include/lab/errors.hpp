#pragma once

#include <stdexcept>
#include <string>

namespace lab {

// Base of every numerical error raised by the library. kind() is what the
// CLI prints when it maps an error to exit code 3.
class lab_error : public std::runtime_error {
public:
    explicit lab_error(const std::string& what) : std::runtime_error(what) {}
    virtual const char* kind() const noexcept { return "LabError"; }
};

#define LAB_DECLARE_ERROR(cls, name)                                      \
    class cls : public lab_error {                                        \
    public:                                                               \
        explicit cls(const std::string& what) : lab_error(what) {}        \
        const char* kind() const noexcept override { return name; }       \
    };

LAB_DECLARE_ERROR(invalid_argument, "InvalidArgument")
LAB_DECLARE_ERROR(dimension_mismatch, "DimensionMismatch")
LAB_DECLARE_ERROR(singular_matrix, "SingularMatrix")
LAB_DECLARE_ERROR(non_convergence, "NonConvergence")
LAB_DECLARE_ERROR(non_real_spectrum, "NonRealSpectrum")
LAB_DECLARE_ERROR(rank_deficient, "RankDeficient")
LAB_DECLARE_ERROR(insufficient_environments, "InsufficientEnvironments")
LAB_DECLARE_ERROR(degenerate_sample, "DegenerateSample")

#undef LAB_DECLARE_ERROR

// Raised when a trajectory leaves the finite regime. Carries the first
// crossing so callers can report it.
class divergence_detected : public lab_error {
public:
    divergence_detected(const std::string& what, double time, double norm)
        : lab_error(what), time_(time), norm_(norm) {}
    const char* kind() const noexcept override { return "DivergenceDetected"; }
    double time() const noexcept { return time_; }
    double norm() const noexcept { return norm_; }

private:
    double time_;
    double norm_;
};

}  // namespace lab
