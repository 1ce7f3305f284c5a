// Regional policy adoption coding.  Effective dates of regional bans
// (billboard advertising, point-of-sale, indoor smoking) are turned into
// absorbing annual indicators per region, which downstream code joins onto
// individual panels: the billboard indicator defines treatment cohorts and
// the other two enter as covariates.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "causalpanel/panel.hpp"

namespace causalpanel {

enum class PolicyKind { BillboardBan = 0, SalesBan = 1, SmokingBan = 2 };
constexpr int kNumPolicyKinds = 3;

const char* policy_kind_name(PolicyKind kind);
PolicyKind parse_policy_kind(const std::string& name);

// How an effective date maps to the first treated calendar year: the year
// containing the date, or (sensitivity variant) the containing year only if
// the ban starts in its first half and the following year otherwise.
enum class DateRule { CalendarYear, MidYear };

struct PolicyEvent {
  std::string region_id;
  PolicyKind kind = PolicyKind::BillboardBan;
  int year = 0;
  int month = 0;
  int day = 0;
};

// Parses strict ISO "YYYY-MM-DD" into a PolicyEvent date; throws DateParseError.
void parse_iso_date(const std::string& text, int& year, int& month, int& day);

class RegionTreatmentTable {
 public:
  const std::vector<std::string>& region_ids() const { return region_ids_; }
  YearRange years() const { return years_; }

  std::optional<std::int32_t> find_region(const std::string& region_id) const;

  // Absorbing 0/1 indicator for (region, year, policy).
  int indicator(std::int32_t region, int year, PolicyKind kind) const;

  // First treated calendar year under the coding rule; nullopt when the
  // region never adopts that policy.  May lie outside the table's years.
  std::optional<int> first_year(std::int32_t region, PolicyKind kind) const;

 private:
  friend RegionTreatmentTable code_annual_indicators(
      const std::vector<PolicyEvent>&, YearRange, DateRule);
  std::vector<std::string> region_ids_;  // sorted
  YearRange years_{};
  // adoption_year_[kind][region]; kNever when the policy never starts.
  std::vector<std::vector<std::int32_t>> adoption_year_;
};

// Codes one event list (at most one event per region and policy; a second
// raises DuplicateEvent).  Regions never adopting a policy are 0 throughout.
RegionTreatmentTable code_annual_indicators(
    const std::vector<PolicyEvent>& events, YearRange years,
    DateRule rule = DateRule::CalendarYear);

// (year, number of regions with the indicator active) for every table year.
std::vector<std::pair<int, int>> adoption_curve(const RegionTreatmentTable& table,
                                                PolicyKind kind);

// CSV: region_id, policy_kind, effective_date (ISO-8601).
std::vector<PolicyEvent> read_policy_csv(const std::string& path);

// CSV: region_id, year, billboard, sales, smoking.
void write_region_year_csv(const RegionTreatmentTable& table,
                           const std::string& path);

// CSV: year, billboard, sales, smoking (regions with each ban active).
void write_adoption_curve_csv(const RegionTreatmentTable& table,
                              const std::string& path);

}  // namespace causalpanel
