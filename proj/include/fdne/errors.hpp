#pragma once

#include <stdexcept>
#include <string>

namespace fdne {

// Base of every error raised by the toolkit. `stage()` names the pipeline
// stage or module that raised it so the CLI can report a tagged message.
class Error : public std::runtime_error {
public:
    Error(std::string stage, const std::string& what)
        : std::runtime_error(what), stage_(std::move(stage)) {}

    [[nodiscard]] const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

#define FDNE_DEFINE_ERROR(Name, Stage)                                      \
    class Name : public Error {                                             \
    public:                                                                 \
        explicit Name(const std::string& what) : Error(Stage, what) {}      \
    }

// netmodel
FDNE_DEFINE_ERROR(CaseError, "netmodel");
FDNE_DEFINE_ERROR(DegenerateBranchError, "netmodel");
FDNE_DEFINE_ERROR(SingularEliminationError, "netmodel");
FDNE_DEFINE_ERROR(PartitionError, "netmodel");
FDNE_DEFINE_ERROR(PowerFlowError, "netmodel");

// coherency
FDNE_DEFINE_ERROR(DomainError, "coherency");

// emt_sim
FDNE_DEFINE_ERROR(TopologyError, "emt_sim");
FDNE_DEFINE_ERROR(SweepSpecError, "emt_sim");

// rls_ident
FDNE_DEFINE_ERROR(IllConditionedError, "rls_ident");
FDNE_DEFINE_ERROR(CoverageError, "rls_ident");
FDNE_DEFINE_ERROR(ModelFormatError, "rls_ident");

// passivity
FDNE_DEFINE_ERROR(SamplingError, "passivity");
FDNE_DEFINE_ERROR(EnforcementError, "passivity");

// fdne_rt
FDNE_DEFINE_ERROR(RuntimeDivergenceError, "fdne_rt");
FDNE_DEFINE_ERROR(CompensationError, "fdne_rt");

// tsa_if
FDNE_DEFINE_ERROR(InsufficientDataError, "tsa_if");
FDNE_DEFINE_ERROR(InterfaceError, "tsa_if");
FDNE_DEFINE_ERROR(IntegrationError, "tsa_if");

// metrics_cli
FDNE_DEFINE_ERROR(ConfigError, "config");
FDNE_DEFINE_ERROR(MetricError, "metrics");

#undef FDNE_DEFINE_ERROR

// Raised by the RLS recursion when the estimate stops being finite.
class DivergenceError : public Error {
public:
    DivergenceError(long sample, const std::string& what)
        : Error("rls_ident", what), sample_(sample) {}

    [[nodiscard]] long sample() const noexcept { return sample_; }

private:
    long sample_;
};

}  // namespace fdne
