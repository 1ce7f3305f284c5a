// Retrospective panel reconstruction.  Each cross-sectional survey record
// carries enough history (smoking status, initiation age, cessation age or
// age range) to rebuild the respondent's annual smoking indicator backwards
// from the interview:
//   never smokers  -> 0 in every reconstructed year;
//   current smokers-> 1 from the initiation age onward;
//   former smokers -> 1 from initiation through cessation (inclusive), 0 after;
//   former smokers with a cessation age range [lo, hi] -> 1 through lo,
//     missing for ages lo+1..hi, 0 above hi.
// Rows run from the year the respondent reached the minimum age (subject to
// an earliest-year floor and an optional history cap) through the interview
// year.  Region policy indicators are joined on afterwards to form the
// estimation panel.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "causalpanel/panel.hpp"
#include "causalpanel/policy.hpp"

namespace causalpanel {

enum class SmokerStatus { Never, Current, Former, Unknown };

const char* smoker_status_name(SmokerStatus status);
SmokerStatus parse_smoker_status(const std::string& name);

struct SurveyRecord {
  std::string respondent_id;
  int survey_year = 0;
  int age_at_survey = 0;
  int gender = 0;  // 1 = female, 0 = male
  std::string region_id;
  SmokerStatus status = SmokerStatus::Unknown;
  std::optional<int> initiation_age;
  std::optional<int> cessation_age;
  std::optional<std::pair<int, int>> cessation_age_range;  // [lo, hi]
};

struct ReconstructionConfig {
  int min_age = 15;
  int earliest_year = 1993;
  std::optional<int> history_cap_years;  // max reconstructed years per record
};

// Annual history for one record, oldest year first.  Throws UnknownStatus
// for UNKNOWN records and InconsistentAges when the reported ages cannot
// order into a valid history.  The returned observations carry no treatment
// or policy covariates; reconstruct_panel joins those on.
std::vector<PanelObservation> reconstruct_history(
    const SurveyRecord& record, const ReconstructionConfig& config);

struct ReconstructionSummary {
  std::int64_t records_total = 0;
  std::int64_t records_excluded_unknown_status = 0;
  std::int64_t records_empty_history = 0;  // e.g. below the minimum age
  std::int64_t rows_emitted = 0;
  std::int64_t rows_missing_outcome = 0;
};

// Builds the full estimation panel: reconstructs every record, joins the
// region policy table (billboard ban = treatment; sales and smoking bans
// enter as covariates), and validates.  UNKNOWN-status records are excluded
// and counted; a record year absent from the policy table raises
// MissingPolicyYear.
CohortPanel reconstruct_panel(const std::vector<SurveyRecord>& records,
                              const ReconstructionConfig& config,
                              const RegionTreatmentTable& policies,
                              ReconstructionSummary* summary = nullptr);

// CSV: respondent_id, survey_year, age, gender, region_id, status,
// init_age, cess_age, cess_lo, cess_hi (empty fields = absent).
std::vector<SurveyRecord> read_survey_csv(const std::string& path);

std::string reconstruction_summary_to_json(const ReconstructionSummary& summary);

// Composition comparison between the raw cross-sections and the
// reconstructed panel, per survey wave: population shares by gender and age
// band, and smoking rates overall and by subgroup.
struct CompositionCells {
  double share_women = 0, share_men = 0;
  double share_age_15_24 = 0, share_age_25_44 = 0;
  double share_age_45_64 = 0, share_age_65_plus = 0;
  double smoking_total = 0;
  double smoking_women = 0, smoking_men = 0;
  double smoking_age_15_24 = 0, smoking_age_25_44 = 0;
  double smoking_age_45_64 = 0, smoking_age_65_plus = 0;
};

struct CompositionReport {
  // wave year -> (original cross-section, reconstructed panel slice,
  // relative difference in percent).
  std::map<int, CompositionCells> original;
  std::map<int, CompositionCells> panel;
  std::map<int, CompositionCells> relative_diff_pct;
};

CompositionReport composition_report(const std::vector<SurveyRecord>& records,
                                     const CohortPanel& panel);

void write_composition_csv(const CompositionReport& report,
                           const std::string& path);

}  // namespace causalpanel
