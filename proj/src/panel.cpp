#include "causalpanel/panel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "causalpanel/csv.hpp"
#include "causalpanel/errors.hpp"

namespace causalpanel {

namespace {

std::int32_t intern(std::map<std::string, std::int32_t, std::less<>>& index,
                    std::vector<std::string>& names, std::string_view id) {
  const auto found = index.find(id);
  if (found != index.end()) return found->second;
  const auto next = static_cast<std::int32_t>(names.size());
  names.emplace_back(id);
  index.emplace(std::string(id), next);
  return next;
}

std::string json_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof(buf), "\\u%04x", c);
          out += buf;
        } else {
          out.push_back(c);
        }
    }
  }
  out += "\"";
  return out;
}

}  // namespace

void PanelBuilder::set_covariate_names(std::vector<std::string> names) {
  if (!covariates_.empty() && names.size() != covariate_names_.size()) {
    throw Error("covariate names changed after rows were added");
  }
  covariate_names_ = std::move(names);
  covariates_.resize(covariate_names_.size());
}

void PanelBuilder::add_row(const std::string& unit_id,
                           const std::string& region_id, int year,
                           double outcome_or_nan, bool treated, int age,
                           int gender, const std::vector<double>& covariates) {
  if (covariates.size() != covariate_names_.size()) {
    throw Error("row has " + std::to_string(covariates.size()) +
                " covariates, expected " +
                std::to_string(covariate_names_.size()));
  }
  unit_.push_back(intern(unit_index_, unit_ids_, unit_id));
  region_.push_back(intern(region_index_, region_ids_, region_id));
  year_.push_back(year);
  outcome_.push_back(outcome_or_nan);
  treated_.push_back(treated ? 1 : 0);
  age_.push_back(static_cast<std::int16_t>(age));
  gender_.push_back(static_cast<std::int8_t>(gender));
  for (std::size_t c = 0; c < covariates.size(); ++c) {
    covariates_[c].push_back(covariates[c]);
  }
}

void PanelBuilder::add_observation(const PanelObservation& obs) {
  if (covariate_names_.empty() && !obs.extra.empty() && unit_.empty()) {
    std::vector<std::string> names;
    for (const auto& [name, value] : obs.extra) names.push_back(name);
    set_covariate_names(std::move(names));
  }
  std::vector<double> covs;
  covs.reserve(covariate_names_.size());
  for (const auto& name : covariate_names_) {
    const auto found = obs.extra.find(name);
    if (found == obs.extra.end()) {
      throw Error("observation for unit '" + obs.unit_id +
                  "' is missing covariate '" + name + "'");
    }
    covs.push_back(found->second);
  }
  const double outcome =
      obs.outcome ? *obs.outcome : std::numeric_limits<double>::quiet_NaN();
  add_row(obs.unit_id, obs.region_id, obs.year, outcome, obs.treated, obs.age,
          obs.gender, covs);
}

// Shared assembly + invariant checks.  `check_staggered` is off for internal
// rebuilds (unit subsets / resamples), where the original design's first
// period no longer applies.
CohortPanel PanelBuilder::assemble(const PanelOptions& options,
                                   bool check_staggered) {
  PanelBuilder& b = *this;
  const std::int64_t n = static_cast<std::int64_t>(b.rows());
  if (n == 0) throw Error("panel has no rows");

  CohortPanel panel;
  panel.unit_ids_ = std::move(b.unit_ids_);
  panel.region_ids_ = std::move(b.region_ids_);
  panel.covariate_names_ = std::move(b.covariate_names_);
  for (std::int32_t u = 0; u < static_cast<std::int32_t>(panel.unit_ids_.size()); ++u) {
    panel.unit_index_.emplace(panel.unit_ids_[u], u);
  }

  // Sort rows by (unit, year) through a permutation.
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t c) {
    if (b.unit_[a] != b.unit_[c]) return b.unit_[a] < b.unit_[c];
    return b.year_[a] < b.year_[c];
  });

  const auto n_size = static_cast<std::size_t>(n);
  panel.unit_.resize(n_size);
  panel.region_.resize(n_size);
  panel.year_.resize(n_size);
  panel.outcome_.resize(n_size);
  panel.treated_.resize(n_size);
  panel.age_.resize(n_size);
  panel.gender_.resize(n_size);
  panel.covariates_.assign(panel.covariate_names_.size(), {});
  for (auto& column : panel.covariates_) column.resize(n_size);
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t src = order[static_cast<std::size_t>(i)];
    panel.unit_[i] = b.unit_[src];
    panel.region_[i] = b.region_[src];
    panel.year_[i] = b.year_[src];
    panel.outcome_[i] = b.outcome_[src];
    panel.treated_[i] = b.treated_[src];
    panel.age_[i] = b.age_[src];
    panel.gender_[i] = b.gender_[src];
    for (std::size_t c = 0; c < panel.covariates_.size(); ++c) {
      panel.covariates_[c][i] = b.covariates_[c][src];
    }
  }

  const std::int32_t n_units = static_cast<std::int32_t>(panel.unit_ids_.size());
  panel.unit_offset_.assign(static_cast<std::size_t>(n_units) + 1, 0);
  for (std::int64_t i = 0; i < n; ++i) {
    panel.unit_offset_[static_cast<std::size_t>(panel.unit_[i]) + 1]++;
  }
  for (std::int32_t u = 0; u < n_units; ++u) {
    panel.unit_offset_[u + 1] += panel.unit_offset_[u];
  }

  panel.years_.min = panel.year_[0];
  panel.years_.max = panel.year_[0];
  for (std::int64_t i = 1; i < n; ++i) {
    panel.years_.min = std::min(panel.years_.min, panel.year_[i]);
    panel.years_.max = std::max(panel.years_.max, panel.year_[i]);
  }

  // Duplicate keys: rows are sorted, so duplicates are adjacent.
  for (std::int64_t i = 1; i < n; ++i) {
    if (panel.unit_[i] == panel.unit_[i - 1] &&
        panel.year_[i] == panel.year_[i - 1]) {
      throw DuplicateKeyError(
          "duplicate observation for unit '" +
          panel.unit_ids_[panel.unit_[i]] + "' in year " +
          std::to_string(panel.year_[i]));
    }
  }

  // Outcome domain.
  bool binary = true;
  for (std::int64_t i = 0; i < n; ++i) {
    const double y = panel.outcome_[i];
    if (std::isnan(y)) continue;
    if (y != 0.0 && y != 1.0) {
      if (options.outcome == OutcomeRequirement::Binary) {
        throw NonBinaryOutcomeError(
            "unit '" + panel.unit_ids_[panel.unit_[i]] + "' year " +
            std::to_string(panel.year_[i]) + " has outcome " +
            format_double(y) + "; expected 0 or 1");
      }
      binary = false;
    }
  }
  panel.outcome_binary_ = binary;

  // First-treated years: from the override when supplied, otherwise the
  // first observed treated year.  Either way the row-level indicators must
  // satisfy treated == (year >= g), which also enforces absorption.
  panel.first_treated_.assign(static_cast<std::size_t>(n_units), kNever);
  for (std::int32_t u = 0; u < n_units; ++u) {
    const auto found = options.first_treated_override.find(panel.unit_ids_[u]);
    if (found != options.first_treated_override.end()) {
      panel.first_treated_[u] = found->second;
      continue;
    }
    for (std::int64_t i = panel.unit_offset_[u]; i < panel.unit_offset_[u + 1]; ++i) {
      if (panel.treated_[i]) {
        panel.first_treated_[u] = panel.year_[i];
        break;
      }
    }
  }
  for (std::int32_t u = 0; u < n_units; ++u) {
    const std::int32_t g = panel.first_treated_[u];
    for (std::int64_t i = panel.unit_offset_[u]; i < panel.unit_offset_[u + 1]; ++i) {
      const bool expected = g != kNever && panel.year_[i] >= g;
      if ((panel.treated_[i] != 0) != expected) {
        throw NonAbsorbingError(
            "unit '" + panel.unit_ids_[u] + "' year " +
            std::to_string(panel.year_[i]) +
            ": treated indicator inconsistent with first treatment year " +
            (g == kNever ? std::string("never") : std::to_string(g)) +
            " (treatment must be absorbing)");
      }
    }
  }

  // No unit that enters at the panel's first year may already be treated.
  if (check_staggered) {
    for (std::int32_t u = 0; u < n_units; ++u) {
      const std::int64_t first_row = panel.unit_offset_[u];
      if (panel.year_[first_row] == panel.years_.min &&
          panel.treated_[first_row]) {
        throw StaggeredAdoptionError(
            "unit '" + panel.unit_ids_[u] + "' is treated in the panel's "
            "first year " + std::to_string(panel.years_.min) +
            "; adoption must begin after the initial period");
      }
    }
  }

  return panel;
}

CohortPanel PanelBuilder::build(const PanelOptions& options) {
  return assemble(options, options.check_staggered);
}

CohortPanel validate_panel(const std::vector<PanelObservation>& observations,
                           const PanelOptions& options) {
  PanelBuilder builder;
  // Collect the union of covariate names up front so rows may omit none.
  std::vector<std::string> names;
  for (const auto& obs : observations) {
    for (const auto& [name, value] : obs.extra) {
      if (std::find(names.begin(), names.end(), name) == names.end()) {
        names.push_back(name);
      }
    }
  }
  std::sort(names.begin(), names.end());
  builder.set_covariate_names(names);
  for (const auto& obs : observations) builder.add_observation(obs);
  return builder.build(options);
}

std::int64_t CohortPanel::find_row(std::int32_t unit, int year) const {
  std::int64_t lo = unit_offset_[unit];
  std::int64_t hi = unit_offset_[unit + 1];
  while (lo < hi) {
    const std::int64_t mid = lo + (hi - lo) / 2;
    if (year_[mid] < year) {
      lo = mid + 1;
    } else {
      hi = mid;
    }
  }
  if (lo < unit_offset_[unit + 1] && year_[lo] == year) return lo;
  return -1;
}

std::int32_t CohortPanel::unit_index(const std::string& unit_id) const {
  const auto found = unit_index_.find(unit_id);
  if (found == unit_index_.end()) {
    throw UnknownUnitError("unit '" + unit_id + "' is not in the panel");
  }
  return found->second;
}

std::optional<std::size_t> CohortPanel::covariate_column(
    const std::string& name) const {
  for (std::size_t c = 0; c < covariate_names_.size(); ++c) {
    if (covariate_names_[c] == name) return c;
  }
  return std::nullopt;
}

std::vector<PanelObservation> CohortPanel::to_observations() const {
  std::vector<PanelObservation> out;
  out.reserve(static_cast<std::size_t>(n_rows()));
  for (std::int64_t i = 0; i < n_rows(); ++i) {
    PanelObservation obs;
    obs.unit_id = unit_ids_[unit_[i]];
    obs.region_id = region_ids_[region_[i]];
    obs.year = year_[i];
    if (!std::isnan(outcome_[i])) obs.outcome = outcome_[i];
    obs.treated = treated_[i] != 0;
    obs.age = age_[i];
    obs.gender = gender_[i];
    for (std::size_t c = 0; c < covariate_names_.size(); ++c) {
      obs.extra[covariate_names_[c]] = covariates_[c][i];
    }
    out.push_back(std::move(obs));
  }
  return out;
}

CohortPanel CohortPanel::subset_units(
    const std::vector<std::int32_t>& keep,
    const std::vector<std::string>* rename) const {
  if (rename && rename->size() != keep.size()) {
    throw Error("rename list must parallel the kept unit list");
  }
  PanelBuilder builder;
  builder.set_covariate_names(covariate_names_);
  PanelOptions options;
  options.outcome = OutcomeRequirement::Any;
  std::vector<double> covs(covariate_names_.size());
  for (std::size_t k = 0; k < keep.size(); ++k) {
    const std::int32_t u = keep[k];
    const std::string id = rename ? (*rename)[k] : unit_ids_[u];
    if (first_treated_[u] != kNever) {
      options.first_treated_override[id] = first_treated_[u];
    }
    for (std::int64_t i = unit_offset_[u]; i < unit_offset_[u + 1]; ++i) {
      for (std::size_t c = 0; c < covs.size(); ++c) covs[c] = covariates_[c][i];
      builder.add_row(id, region_ids_[region_[i]], year_[i], outcome_[i],
                      treated_[i] != 0, age_[i], gender_[i], covs);
    }
  }
  return builder.assemble(options, /*check_staggered=*/false);
}

CohortIndex build_cohort_index(const CohortPanel& panel) {
  CohortIndex index;
  for (std::int32_t u = 0; u < panel.n_units(); ++u) {
    const std::int32_t g = panel.first_treated(u);
    if (g == kNever) {
      index.never_treated.push_back(u);
    } else {
      index.members[g].push_back(u);
    }
  }
  for (const auto& [g, members] : index.members) index.groups.push_back(g);
  return index;
}

std::optional<int> event_time(const CohortPanel& panel,
                              const std::string& unit_id, int year) {
  const std::int32_t u = panel.unit_index(unit_id);
  const std::int32_t g = panel.first_treated(u);
  if (g == kNever) return std::nullopt;
  return year - g;
}

namespace {

const char* const kFixedColumns[] = {"unit_id", "region_id", "year",
                                     "outcome", "treated",   "age",
                                     "gender"};
constexpr std::size_t kNumFixed = 7;

}  // namespace

CohortPanel read_panel_csv(const std::string& path,
                           const PanelOptions& options) {
  const std::string bytes = read_file(path);
  PanelBuilder builder;

  std::size_t pos = 0;
  auto next_line = [&](std::string_view& line) -> bool {
    if (pos >= bytes.size()) return false;
    std::size_t end = bytes.find('\n', pos);
    if (end == std::string::npos) end = bytes.size();
    line = std::string_view(bytes).substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos = end + 1;
    return true;
  };

  std::string_view line;
  if (!next_line(line)) throw ParseError("'" + path + "' is empty");
  const auto header = split_csv_line(std::string(line));
  if (header.size() < kNumFixed) {
    throw ParseError("panel CSV '" + path + "' must start with columns "
                     "unit_id, region_id, year, outcome, treated, age, gender");
  }
  for (std::size_t c = 0; c < kNumFixed; ++c) {
    if (header[c] != kFixedColumns[c]) {
      throw ParseError("panel CSV '" + path + "' column " + std::to_string(c) +
                       " is '" + header[c] + "', expected '" +
                       kFixedColumns[c] + "'");
    }
  }
  std::vector<std::string> covariate_names(header.begin() + kNumFixed,
                                           header.end());
  builder.set_covariate_names(covariate_names);

  std::vector<std::string_view> fields;
  std::vector<double> covs(covariate_names.size());
  std::int64_t line_no = 1;
  while (next_line(line)) {
    ++line_no;
    if (line.empty()) continue;
    fields.clear();
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == ',') {
        fields.push_back(line.substr(start, i - start));
        start = i + 1;
      }
    }
    if (fields.size() != header.size()) {
      throw ParseError("'" + path + "' line " + std::to_string(line_no) +
                       " has " + std::to_string(fields.size()) +
                       " fields, expected " + std::to_string(header.size()));
    }
    auto parse_long = [&](std::string_view f, const char* what) -> long long {
      long long value = 0;
      const auto result = std::from_chars(f.data(), f.data() + f.size(), value);
      if (result.ec != std::errc{} || result.ptr != f.data() + f.size()) {
        throw ParseError("'" + path + "' line " + std::to_string(line_no) +
                         ": cannot parse " + what + " ('" + std::string(f) + "')");
      }
      return value;
    };
    auto parse_real = [&](std::string_view f, const char* what) -> double {
      if (f.empty()) return std::numeric_limits<double>::quiet_NaN();
      double value = 0.0;
      const auto result = std::from_chars(f.data(), f.data() + f.size(), value);
      if (result.ec != std::errc{} || result.ptr != f.data() + f.size()) {
        throw ParseError("'" + path + "' line " + std::to_string(line_no) +
                         ": cannot parse " + what + " ('" + std::string(f) + "')");
      }
      return value;
    };

    const int year = static_cast<int>(parse_long(fields[2], "year"));
    const double outcome = parse_real(fields[3], "outcome");
    const long long treated = parse_long(fields[4], "treated");
    if (treated != 0 && treated != 1) {
      throw ParseError("'" + path + "' line " + std::to_string(line_no) +
                       ": treated must be 0 or 1");
    }
    const int age = static_cast<int>(parse_long(fields[5], "age"));
    const int gender = static_cast<int>(parse_long(fields[6], "gender"));
    for (std::size_t c = 0; c < covs.size(); ++c) {
      covs[c] = parse_real(fields[kNumFixed + c], "covariate");
    }
    builder.add_row(std::string(fields[0]), std::string(fields[1]), year,
                    outcome, treated == 1, age, gender, covs);
  }
  return builder.build(options);
}

void write_panel_csv(const CohortPanel& panel, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "unit_id,region_id,year,outcome,treated,age,gender";
  for (const auto& name : panel.covariate_names()) out << ',' << csv_escape(name);
  out << '\n';
  for (std::int64_t i = 0; i < panel.n_rows(); ++i) {
    out << csv_escape(panel.unit_ids()[panel.unit(i)]) << ','
        << csv_escape(panel.region_ids()[panel.region(i)]) << ','
        << panel.year(i) << ',' << format_double_exact(panel.outcome(i)) << ','
        << (panel.treated(i) ? 1 : 0) << ',' << panel.age(i) << ','
        << panel.gender(i);
    for (std::size_t c = 0; c < panel.covariate_names().size(); ++c) {
      out << ',' << format_double_exact(panel.covariate(i, c));
    }
    out << '\n';
  }
  if (!out) throw IoError("failed while writing '" + path + "'");
}

std::string cohort_index_to_json(const CohortIndex& index,
                                 const CohortPanel& panel) {
  auto sorted_ids = [&](const std::vector<std::int32_t>& units) {
    std::vector<std::string> ids;
    ids.reserve(units.size());
    for (std::int32_t u : units) ids.push_back(panel.unit_ids()[u]);
    std::sort(ids.begin(), ids.end());
    return ids;
  };

  std::ostringstream out;
  out << "{\n  \"year_range\": [" << panel.years().min << ", "
      << panel.years().max << "],\n  \"groups\": [";
  for (std::size_t i = 0; i < index.groups.size(); ++i) {
    if (i) out << ", ";
    out << index.groups[i];
  }
  out << "],\n  \"members\": {";
  bool first_group = true;
  for (const auto& [g, members] : index.members) {
    if (!first_group) out << ",";
    first_group = false;
    out << "\n    " << json_quote(std::to_string(g)) << ": [";
    const auto ids = sorted_ids(members);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i) out << ", ";
      out << json_quote(ids[i]);
    }
    out << "]";
  }
  out << "\n  },\n  \"never_treated\": [";
  const auto never_ids = sorted_ids(index.never_treated);
  for (std::size_t i = 0; i < never_ids.size(); ++i) {
    if (i) out << ", ";
    out << json_quote(never_ids[i]);
  }
  out << "]\n}\n";
  return out.str();
}

}  // namespace causalpanel
