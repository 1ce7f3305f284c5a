#include "causalpanel/reconstruct.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "causalpanel/csv.hpp"
#include "causalpanel/errors.hpp"

namespace causalpanel {

const char* smoker_status_name(SmokerStatus status) {
  switch (status) {
    case SmokerStatus::Never: return "never";
    case SmokerStatus::Current: return "current";
    case SmokerStatus::Former: return "former";
    case SmokerStatus::Unknown: return "unknown";
  }
  return "?";
}

SmokerStatus parse_smoker_status(const std::string& name) {
  std::string lower;
  lower.reserve(name.size());
  for (char c : name) lower.push_back(static_cast<char>(std::tolower(c)));
  if (lower == "never") return SmokerStatus::Never;
  if (lower == "current") return SmokerStatus::Current;
  if (lower == "former") return SmokerStatus::Former;
  if (lower == "unknown" || lower.empty()) return SmokerStatus::Unknown;
  throw ParseError("unknown smoker status '" + name + "'");
}

namespace {

void check_record(const SurveyRecord& r) {
  auto fail = [&](const std::string& why) {
    throw InconsistentAgesError("record '" + r.respondent_id + "': " + why);
  };
  if (r.age_at_survey < 0) fail("negative age at survey");
  const bool has_point = r.cessation_age.has_value();
  const bool has_range = r.cessation_age_range.has_value();
  switch (r.status) {
    case SmokerStatus::Never:
      if (r.initiation_age || has_point || has_range) {
        fail("never-smoker records must not carry initiation or cessation ages");
      }
      break;
    case SmokerStatus::Current:
      if (!r.initiation_age) fail("current-smoker records need an initiation age");
      if (has_point || has_range) {
        fail("current-smoker records must not carry a cessation age");
      }
      break;
    case SmokerStatus::Former:
      if (!r.initiation_age) fail("former-smoker records need an initiation age");
      if (has_point == has_range) {
        fail("former-smoker records need exactly one of a cessation age or a "
             "cessation age range");
      }
      break;
    case SmokerStatus::Unknown:
      throw UnknownStatusError("record '" + r.respondent_id +
                               "' has unknown smoking status");
  }
  if (r.initiation_age) {
    if (*r.initiation_age < 0) fail("negative initiation age");
    if (*r.initiation_age > r.age_at_survey) {
      fail("initiation age exceeds age at survey");
    }
  }
  if (has_point) {
    if (*r.cessation_age < *r.initiation_age) {
      fail("cessation age precedes initiation age");
    }
    if (*r.cessation_age > r.age_at_survey) {
      fail("cessation age exceeds age at survey");
    }
  }
  if (has_range) {
    const auto [lo, hi] = *r.cessation_age_range;
    if (lo > hi) fail("cessation age range is reversed");
    if (lo < *r.initiation_age) {
      fail("cessation age range starts before the initiation age");
    }
    if (hi > r.age_at_survey) {
      fail("cessation age range exceeds age at survey");
    }
  }
}

// Smoking indicator at a given age; NaN = not recoverable from the record.
double outcome_at_age(const SurveyRecord& r, int age) {
  constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();
  switch (r.status) {
    case SmokerStatus::Never:
      return 0.0;
    case SmokerStatus::Current:
      return age >= *r.initiation_age ? 1.0 : 0.0;
    case SmokerStatus::Former:
      if (r.cessation_age) {
        return (age >= *r.initiation_age && age <= *r.cessation_age) ? 1.0 : 0.0;
      } else {
        const auto [lo, hi] = *r.cessation_age_range;
        if (age <= lo) return age >= *r.initiation_age ? 1.0 : 0.0;
        if (age <= hi) return kMissing;  // could have quit in any range year
        return 0.0;
      }
    case SmokerStatus::Unknown:
      break;
  }
  return kMissing;
}

}  // namespace

std::vector<PanelObservation> reconstruct_history(
    const SurveyRecord& record, const ReconstructionConfig& config) {
  check_record(record);

  // First reconstructed year: when the respondent reached the minimum age,
  // floored by the earliest covered year and the optional history cap.
  int start = record.survey_year - (record.age_at_survey - config.min_age);
  start = std::max(start, config.earliest_year);
  if (config.history_cap_years) {
    start = std::max(start, record.survey_year - *config.history_cap_years + 1);
  }

  std::vector<PanelObservation> history;
  if (start > record.survey_year) return history;  // below min age, or no overlap
  history.reserve(static_cast<std::size_t>(record.survey_year - start + 1));
  for (int year = start; year <= record.survey_year; ++year) {
    const int age = record.age_at_survey - (record.survey_year - year);
    PanelObservation obs;
    obs.unit_id = record.respondent_id;
    obs.region_id = record.region_id;
    obs.year = year;
    obs.age = age;
    obs.gender = record.gender;
    obs.treated = false;
    const double y = outcome_at_age(record, age);
    if (!std::isnan(y)) obs.outcome = y;
    history.push_back(std::move(obs));
  }
  return history;
}

CohortPanel reconstruct_panel(const std::vector<SurveyRecord>& records,
                              const ReconstructionConfig& config,
                              const RegionTreatmentTable& policies,
                              ReconstructionSummary* summary) {
  ReconstructionSummary counts;
  PanelBuilder builder;
  builder.set_covariate_names({"sales_ban", "smoking_ban"});
  PanelOptions options;
  options.outcome = OutcomeRequirement::Binary;

  std::vector<double> covs(2);
  for (const auto& record : records) {
    ++counts.records_total;
    if (record.status == SmokerStatus::Unknown) {
      ++counts.records_excluded_unknown_status;
      continue;
    }
    const auto history = reconstruct_history(record, config);
    if (history.empty()) {
      ++counts.records_empty_history;
      continue;
    }
    const auto region = policies.find_region(record.region_id);
    if (!region) {
      throw MissingPolicyYearError("region '" + record.region_id +
                                   "' is not in the policy table");
    }
    const auto billboard_start =
        policies.first_year(*region, PolicyKind::BillboardBan);
    if (billboard_start) {
      options.first_treated_override[record.respondent_id] = *billboard_start;
    }
    for (const auto& obs : history) {
      if (!policies.years().contains(obs.year)) {
        throw MissingPolicyYearError(
            "reconstructed year " + std::to_string(obs.year) + " for record '" +
            record.respondent_id + "' is outside the policy table (" +
            std::to_string(policies.years().min) + "-" +
            std::to_string(policies.years().max) + ")");
      }
      const bool treated =
          policies.indicator(*region, obs.year, PolicyKind::BillboardBan) != 0;
      covs[0] = policies.indicator(*region, obs.year, PolicyKind::SalesBan);
      covs[1] = policies.indicator(*region, obs.year, PolicyKind::SmokingBan);
      const double outcome =
          obs.outcome ? *obs.outcome : std::numeric_limits<double>::quiet_NaN();
      if (!obs.outcome) ++counts.rows_missing_outcome;
      builder.add_row(obs.unit_id, obs.region_id, obs.year, outcome, treated,
                      obs.age, obs.gender, covs);
      ++counts.rows_emitted;
    }
  }

  if (summary) *summary = counts;
  return builder.build(options);
}

std::vector<SurveyRecord> read_survey_csv(const std::string& path) {
  const CsvTable csv = read_csv(path);
  const std::size_t id_col = csv.column("respondent_id");
  const std::size_t year_col = csv.column("survey_year");
  const std::size_t age_col = csv.column("age");
  const std::size_t gender_col = csv.column("gender");
  const std::size_t region_col = csv.column("region_id");
  const std::size_t status_col = csv.column("status");
  const std::size_t init_col = csv.column("init_age");
  const std::size_t cess_col = csv.column("cess_age");
  const std::size_t lo_col = csv.column("cess_lo");
  const std::size_t hi_col = csv.column("cess_hi");

  std::vector<SurveyRecord> records;
  records.reserve(csv.rows.size());
  for (const auto& row : csv.rows) {
    SurveyRecord r;
    r.respondent_id = row[id_col];
    r.survey_year = static_cast<int>(*parse_int_field(row[year_col]));
    r.age_at_survey = static_cast<int>(*parse_int_field(row[age_col]));
    r.gender = static_cast<int>(*parse_int_field(row[gender_col]));
    r.region_id = row[region_col];
    r.status = parse_smoker_status(row[status_col]);
    if (const auto v = parse_int_field(row[init_col])) {
      r.initiation_age = static_cast<int>(*v);
    }
    if (const auto v = parse_int_field(row[cess_col])) {
      r.cessation_age = static_cast<int>(*v);
    }
    const auto lo = parse_int_field(row[lo_col]);
    const auto hi = parse_int_field(row[hi_col]);
    if (lo.has_value() != hi.has_value()) {
      throw ParseError("record '" + r.respondent_id +
                       "': cess_lo and cess_hi must be given together");
    }
    if (lo) {
      r.cessation_age_range = {static_cast<int>(*lo), static_cast<int>(*hi)};
    }
    records.push_back(std::move(r));
  }
  return records;
}

std::string reconstruction_summary_to_json(const ReconstructionSummary& s) {
  std::ostringstream out;
  out << "{\n"
      << "  \"records_total\": " << s.records_total << ",\n"
      << "  \"records_excluded_unknown_status\": "
      << s.records_excluded_unknown_status << ",\n"
      << "  \"records_empty_history\": " << s.records_empty_history << ",\n"
      << "  \"rows_emitted\": " << s.rows_emitted << ",\n"
      << "  \"rows_missing_outcome\": " << s.rows_missing_outcome << "\n"
      << "}\n";
  return out.str();
}

namespace {

// Tallies one population slice (a wave cross-section or a panel year).
struct CompositionAccumulator {
  double n = 0;
  double women = 0, men = 0;
  double band[4] = {0, 0, 0, 0};
  double smoker_n[7] = {0, 0, 0, 0, 0, 0, 0};   // total, women, men, 4 bands
  double smoker_sum[7] = {0, 0, 0, 0, 0, 0, 0};

  static int age_band(int age) {
    if (age <= 24) return 0;
    if (age <= 44) return 1;
    if (age <= 64) return 2;
    return 3;
  }

  void add(int age, int gender, double outcome_or_nan) {
    n += 1;
    if (gender == 1) women += 1; else men += 1;
    const int b = age_band(age);
    band[b] += 1;
    if (!std::isnan(outcome_or_nan)) {
      const int slots[3] = {0, gender == 1 ? 1 : 2, 3 + b};
      for (int s : slots) {
        smoker_n[s] += 1;
        smoker_sum[s] += outcome_or_nan;
      }
    }
  }

  CompositionCells cells() const {
    auto share = [&](double x) { return n > 0 ? x / n : 0.0; };
    auto rate = [&](int s) {
      return smoker_n[s] > 0 ? smoker_sum[s] / smoker_n[s] : 0.0;
    };
    CompositionCells c;
    c.share_women = share(women);
    c.share_men = share(men);
    c.share_age_15_24 = share(band[0]);
    c.share_age_25_44 = share(band[1]);
    c.share_age_45_64 = share(band[2]);
    c.share_age_65_plus = share(band[3]);
    c.smoking_total = rate(0);
    c.smoking_women = rate(1);
    c.smoking_men = rate(2);
    c.smoking_age_15_24 = rate(3);
    c.smoking_age_25_44 = rate(4);
    c.smoking_age_45_64 = rate(5);
    c.smoking_age_65_plus = rate(6);
    return c;
  }
};

double rel_diff_pct(double panel, double original) {
  if (original == 0.0) {
    return panel == 0.0 ? 0.0 : std::numeric_limits<double>::quiet_NaN();
  }
  return (panel - original) / original * 100.0;
}

CompositionCells diff_cells(const CompositionCells& p, const CompositionCells& o) {
  CompositionCells d;
  d.share_women = rel_diff_pct(p.share_women, o.share_women);
  d.share_men = rel_diff_pct(p.share_men, o.share_men);
  d.share_age_15_24 = rel_diff_pct(p.share_age_15_24, o.share_age_15_24);
  d.share_age_25_44 = rel_diff_pct(p.share_age_25_44, o.share_age_25_44);
  d.share_age_45_64 = rel_diff_pct(p.share_age_45_64, o.share_age_45_64);
  d.share_age_65_plus = rel_diff_pct(p.share_age_65_plus, o.share_age_65_plus);
  d.smoking_total = rel_diff_pct(p.smoking_total, o.smoking_total);
  d.smoking_women = rel_diff_pct(p.smoking_women, o.smoking_women);
  d.smoking_men = rel_diff_pct(p.smoking_men, o.smoking_men);
  d.smoking_age_15_24 = rel_diff_pct(p.smoking_age_15_24, o.smoking_age_15_24);
  d.smoking_age_25_44 = rel_diff_pct(p.smoking_age_25_44, o.smoking_age_25_44);
  d.smoking_age_45_64 = rel_diff_pct(p.smoking_age_45_64, o.smoking_age_45_64);
  d.smoking_age_65_plus = rel_diff_pct(p.smoking_age_65_plus, o.smoking_age_65_plus);
  return d;
}

}  // namespace

CompositionReport composition_report(const std::vector<SurveyRecord>& records,
                                     const CohortPanel& panel) {
  std::set<int> waves;
  for (const auto& r : records) {
    if (r.status != SmokerStatus::Unknown) waves.insert(r.survey_year);
  }

  std::map<int, CompositionAccumulator> original;
  for (const auto& r : records) {
    if (r.status == SmokerStatus::Unknown) continue;
    original[r.survey_year].add(r.age_at_survey, r.gender,
                                r.status == SmokerStatus::Current ? 1.0 : 0.0);
  }

  std::map<int, CompositionAccumulator> slice;
  for (std::int64_t i = 0; i < panel.n_rows(); ++i) {
    if (!waves.count(panel.year(i))) continue;
    slice[panel.year(i)].add(panel.age(i), panel.gender(i), panel.outcome(i));
  }

  CompositionReport report;
  for (int wave : waves) {
    report.original[wave] = original[wave].cells();
    report.panel[wave] = slice[wave].cells();
    report.relative_diff_pct[wave] =
        diff_cells(report.panel[wave], report.original[wave]);
  }
  return report;
}

void write_composition_csv(const CompositionReport& report,
                           const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "year,view,share_women,share_men,share_age_15_24,share_age_25_44,"
         "share_age_45_64,share_age_65_plus,smoking_total,smoking_women,"
         "smoking_men,smoking_age_15_24,smoking_age_25_44,smoking_age_45_64,"
         "smoking_age_65_plus\n";
  auto write_row = [&](int year, const char* view, const CompositionCells& c) {
    out << year << ',' << view;
    const double values[] = {c.share_women,       c.share_men,
                             c.share_age_15_24,   c.share_age_25_44,
                             c.share_age_45_64,   c.share_age_65_plus,
                             c.smoking_total,     c.smoking_women,
                             c.smoking_men,       c.smoking_age_15_24,
                             c.smoking_age_25_44, c.smoking_age_45_64,
                             c.smoking_age_65_plus};
    for (double v : values) out << ',' << format_double(v, 10);
    out << '\n';
  };
  for (const auto& [year, cells] : report.original) {
    write_row(year, "original", cells);
    write_row(year, "panel", report.panel.at(year));
    write_row(year, "diff_pct", report.relative_diff_pct.at(year));
  }
  if (!out) throw IoError("failed while writing '" + path + "'");
}

}  // namespace causalpanel
