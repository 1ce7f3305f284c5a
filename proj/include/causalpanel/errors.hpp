// Error taxonomy for the panel estimation library.  Every failure mode that a
// caller can reasonably branch on gets its own exception type; all of them
// derive from Error so pipelines can catch the library's failures wholesale
// without swallowing unrelated std exceptions.
#pragma once

#include <stdexcept>
#include <string>

namespace causalpanel {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// --- panel construction / validation ---
struct DuplicateKeyError : Error { using Error::Error; };
struct NonAbsorbingError : Error { using Error::Error; };
struct NonBinaryOutcomeError : Error { using Error::Error; };
struct StaggeredAdoptionError : Error { using Error::Error; };
struct UnknownUnitError : Error { using Error::Error; };
struct NoTreatedUnitsError : Error { using Error::Error; };

// --- survey history reconstruction ---
struct UnknownStatusError : Error { using Error::Error; };
struct InconsistentAgesError : Error { using Error::Error; };
struct MissingPolicyYearError : Error { using Error::Error; };

// --- policy coding ---
struct DateParseError : Error { using Error::Error; };
struct DuplicateEventError : Error { using Error::Error; };

// --- group-time estimation ---
struct EmptyComparisonSetError : Error { using Error::Error; };
struct PropensityOverflowError : Error { using Error::Error; };
struct SingularDesignError : Error { using Error::Error; };
struct NonConvergenceError : Error { using Error::Error; };

// --- factor-model estimation ---
struct InsufficientPretreatmentError : Error { using Error::Error; };
struct RankDeficientError : Error { using Error::Error; };
struct MissingFactorYearError : Error { using Error::Error; };

// --- aggregation ---
struct MissingCellError : Error { using Error::Error; };
struct WeightDegenerateError : Error { using Error::Error; };
struct WindowOutOfRangeError : Error { using Error::Error; };

// --- inference ---
struct SingleClusterError : Error { using Error::Error; };
struct TooManyFailedReplicatesError : Error { using Error::Error; };
struct EmptyStratumError : Error { using Error::Error; };

// --- simulation ---
struct InfeasibleSpecError : Error { using Error::Error; };

// --- io ---
struct IoError : Error { using Error::Error; };
struct ParseError : Error { using Error::Error; };

}  // namespace causalpanel
