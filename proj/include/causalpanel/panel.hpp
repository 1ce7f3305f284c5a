// Core panel data model: individual-by-year observations with an absorbing
// treatment indicator, grouped into adoption cohorts by first treatment year.
//
// CohortPanel stores the data in validated columnar form (rows sorted by
// unit, then year) so the estimators can slice it without re-checking
// invariants: treatment is absorbing, (unit, year) keys are unique, the
// first-treated year of every unit is consistent with its row-level
// indicators, and no unit enters the panel treated in the panel's first year.
#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace causalpanel {

// First-treated sentinel for units that never adopt treatment.
constexpr std::int32_t kNever = std::numeric_limits<std::int32_t>::max();

struct YearRange {
  int min = 0;
  int max = 0;
  int span() const { return max - min + 1; }
  bool contains(int year) const { return year >= min && year <= max; }
};

// Row-level record used for panel construction and small fixtures.  Bulk
// paths (CSV, simulation, survey reconstruction) feed PanelBuilder directly.
struct PanelObservation {
  std::string unit_id;
  std::string region_id;
  int year = 0;
  std::optional<double> outcome;  // absent = missing
  bool treated = false;
  int age = 0;
  int gender = 0;  // 1 = female, 0 = male
  std::map<std::string, double> extra;  // additional covariates by name
};

enum class OutcomeRequirement {
  Binary,  // outcomes must be exactly 0 or 1 when present
  Any,     // continuous outcomes allowed
};

struct PanelOptions {
  OutcomeRequirement outcome = OutcomeRequirement::Any;
  // First treatment year by unit id, when known from an external source
  // (e.g. regional policy adoption).  Units absent from the map are derived
  // from their row-level indicators: first observed treated year, or never.
  std::map<std::string, int> first_treated_override;
  // Adoption must start strictly after the panel begins.  Disable when
  // building a deliberate subset (e.g. row filters) whose first year may
  // postdate some adoptions.
  bool check_staggered = true;
};

class CohortPanel;

// Accumulates rows, then sorts and validates them into a CohortPanel.
class PanelBuilder {
 public:
  // Names for covariate columns beyond the fixed ones; must be set before
  // rows that carry covariate values.
  void set_covariate_names(std::vector<std::string> names);

  void add_row(const std::string& unit_id, const std::string& region_id,
               int year, double outcome_or_nan, bool treated, int age,
               int gender, const std::vector<double>& covariates);
  void add_observation(const PanelObservation& obs);

  std::size_t rows() const { return year_.size(); }

  CohortPanel build(const PanelOptions& options = {});

 private:
  friend class CohortPanel;
  CohortPanel assemble(const PanelOptions& options, bool check_staggered);
  std::vector<std::string> unit_ids_;    // index -> id
  std::vector<std::string> region_ids_;  // index -> id
  std::map<std::string, std::int32_t, std::less<>> unit_index_;
  std::map<std::string, std::int32_t, std::less<>> region_index_;
  std::vector<std::string> covariate_names_;

  std::vector<std::int32_t> unit_;
  std::vector<std::int32_t> region_;
  std::vector<std::int32_t> year_;
  std::vector<double> outcome_;  // NaN = missing
  std::vector<std::int8_t> treated_;
  std::vector<std::int16_t> age_;
  std::vector<std::int8_t> gender_;
  std::vector<std::vector<double>> covariates_;  // per-column storage
};

class CohortPanel {
 public:
  std::int64_t n_rows() const { return static_cast<std::int64_t>(year_.size()); }
  std::int32_t n_units() const { return static_cast<std::int32_t>(unit_ids_.size()); }
  YearRange years() const { return years_; }
  bool outcome_is_binary() const { return outcome_binary_; }

  const std::vector<std::string>& unit_ids() const { return unit_ids_; }
  const std::vector<std::string>& region_ids() const { return region_ids_; }
  const std::vector<std::string>& covariate_names() const { return covariate_names_; }

  // Row accessors (rows are sorted by unit, then year).
  std::int32_t unit(std::int64_t row) const { return unit_[row]; }
  std::int32_t region(std::int64_t row) const { return region_[row]; }
  int year(std::int64_t row) const { return year_[row]; }
  double outcome(std::int64_t row) const { return outcome_[row]; }  // NaN = missing
  bool treated(std::int64_t row) const { return treated_[row] != 0; }
  int age(std::int64_t row) const { return age_[row]; }
  int gender(std::int64_t row) const { return gender_[row]; }
  double covariate(std::int64_t row, std::size_t col) const {
    return covariates_[col][row];
  }

  // Contiguous row range [begin, end) for a unit.
  std::int64_t unit_rows_begin(std::int32_t unit) const { return unit_offset_[unit]; }
  std::int64_t unit_rows_end(std::int32_t unit) const { return unit_offset_[unit + 1]; }

  // Row index of (unit, year), or -1 when unobserved.
  std::int64_t find_row(std::int32_t unit, int year) const;

  // First treatment year of a unit; kNever for never-treated units.
  std::int32_t first_treated(std::int32_t unit) const { return first_treated_[unit]; }

  std::int32_t unit_index(const std::string& unit_id) const;  // throws UnknownUnit

  std::optional<std::size_t> covariate_column(const std::string& name) const;

  std::vector<PanelObservation> to_observations() const;

  // Validated rebuild restricted to `keep` units (resampling, filtering).
  // Unit ids are remapped through `rename` when provided (parallel to keep).
  CohortPanel subset_units(const std::vector<std::int32_t>& keep,
                           const std::vector<std::string>* rename = nullptr) const;

 private:
  friend class PanelBuilder;
  std::vector<std::string> unit_ids_;
  std::vector<std::string> region_ids_;
  std::vector<std::string> covariate_names_;
  std::map<std::string, std::int32_t, std::less<>> unit_index_;

  std::vector<std::int32_t> unit_;
  std::vector<std::int32_t> region_;
  std::vector<std::int32_t> year_;
  std::vector<double> outcome_;
  std::vector<std::int8_t> treated_;
  std::vector<std::int16_t> age_;
  std::vector<std::int8_t> gender_;
  std::vector<std::vector<double>> covariates_;

  std::vector<std::int64_t> unit_offset_;    // size n_units + 1
  std::vector<std::int32_t> first_treated_;  // per unit, kNever sentinel
  YearRange years_{};
  bool outcome_binary_ = true;
};

// Validates row-level observations and assembles the columnar panel.
// Throws DuplicateKey / NonAbsorbing / NonBinaryOutcome / StaggeredAdoption.
CohortPanel validate_panel(const std::vector<PanelObservation>& observations,
                           const PanelOptions& options = {});

// Cohort structure: adoption years, members per cohort, never-treated units.
struct CohortIndex {
  std::vector<int> groups;  // sorted distinct first-treatment years
  std::map<int, std::vector<std::int32_t>> members;  // year -> sorted unit indices
  std::vector<std::int32_t> never_treated;           // sorted unit indices
};

CohortIndex build_cohort_index(const CohortPanel& panel);

// Event time (year - g) for one unit; nullopt for never-treated units.
// Throws UnknownUnit when the id is not in the panel.
std::optional<int> event_time(const CohortPanel& panel,
                              const std::string& unit_id, int year);

// --- serialization ---

// Long CSV: unit_id, region_id, year, outcome, treated, age, gender,
// <extra covariates>.  Missing outcomes are empty fields.
CohortPanel read_panel_csv(const std::string& path,
                           const PanelOptions& options = {});
void write_panel_csv(const CohortPanel& panel, const std::string& path);

// Cohort index as JSON (groups, member ids, never-treated ids, year range).
std::string cohort_index_to_json(const CohortIndex& index,
                                 const CohortPanel& panel);

}  // namespace causalpanel
