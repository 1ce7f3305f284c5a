// Batch front end for the causalpanel library.  Subcommands cover the full
// pipeline: reconstruct survey histories into a panel, code regional policy
// adoption, estimate dynamic effects (staggered DiD or factor-model
// imputation), generate synthetic panels, and run Monte Carlo benchmarks.
//
// Every run writes its outputs under --out with fixed names plus a
// manifest.json recording the command, input file hashes, the fully
// resolved configuration, and the seed -- enough to reproduce the run
// exactly.  Outputs are byte-identical for the same inputs and seed
// regardless of --threads.  Configuration precedence: built-in defaults,
// then --config file values, then explicit flags.
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "causalpanel/csv.hpp"
#include "causalpanel/did.hpp"
#include "causalpanel/errors.hpp"
#include "causalpanel/event_study.hpp"
#include "causalpanel/factor_model.hpp"
#include "causalpanel/inference.hpp"
#include "causalpanel/panel.hpp"
#include "causalpanel/policy.hpp"
#include "causalpanel/reconstruct.hpp"
#include "causalpanel/simulate.hpp"

namespace cp = causalpanel;
using Json = nlohmann::ordered_json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// ---------------------------------------------------------------------------
// Output plumbing.

void ensure_out_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) {
    throw cp::IoError("cannot create output directory '" + dir +
                      "': " + ec.message());
  }
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw cp::IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw cp::IoError("write to '" + path + "' failed");
}

// Accumulates the reproducibility manifest for one run and writes it as the
// final output, so a manifest on disk implies the run completed.
class Manifest {
 public:
  explicit Manifest(std::string command) : command_(std::move(command)) {}

  void add_input(const std::string& path) {
    inputs_[path] = cp::fnv1a_hex(cp::read_file(path));
  }
  void set_config(Json config) { config_ = std::move(config); }
  void set_seed(std::uint64_t seed) { seed_ = seed; }
  void add_output(const std::string& name) { outputs_.push_back(name); }

  void write(const std::string& dir) {
    Json doc;
    doc["command"] = command_;
    doc["inputs"] = Json::object();
    for (const auto& [path, hash] : inputs_) doc["inputs"][path] = hash;
    doc["config"] = config_;
    doc["seed"] = seed_;
    doc["outputs"] = outputs_;
    write_text(join_path(dir, "manifest.json"), doc.dump(2) + "\n");
  }

 private:
  std::string command_;
  std::map<std::string, std::string> inputs_;
  Json config_ = Json::object();
  std::uint64_t seed_ = 0;
  std::vector<std::string> outputs_;
};

// ---------------------------------------------------------------------------
// Row filters (subgroup re-estimation) and history truncation.

struct RowFilter {
  std::string field;
  std::string op;  // ==, !=, <=, >=, <, >
  std::string text;
  double number = 0.0;
  bool is_numeric = false;
};

RowFilter parse_row_filter(const std::string& expr) {
  static const std::vector<std::string> kOps = {"==", "!=", "<=",
                                                ">=", "<",  ">"};
  std::size_t best_pos = std::string::npos;
  std::string best_op;
  for (const auto& op : kOps) {
    const std::size_t pos = expr.find(op);
    if (pos == std::string::npos) continue;
    if (pos < best_pos || (pos == best_pos && op.size() > best_op.size())) {
      best_pos = pos;
      best_op = op;
    }
  }
  if (best_pos == std::string::npos) {
    throw cp::ParseError("filter '" + expr +
                         "' has no comparison operator (==, !=, <=, >=, <, >)");
  }
  const auto trim = [](std::string s) {
    const auto notspace = [](char c) { return !std::isspace((unsigned char)c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), notspace));
    s.erase(std::find_if(s.rbegin(), s.rend(), notspace).base(), s.end());
    return s;
  };
  RowFilter filter;
  filter.field = trim(expr.substr(0, best_pos));
  filter.op = best_op;
  filter.text = trim(expr.substr(best_pos + best_op.size()));
  if (filter.field.empty() || filter.text.empty()) {
    throw cp::ParseError("filter '" + expr + "' needs both a field and a value");
  }
  try {
    std::size_t used = 0;
    filter.number = std::stod(filter.text, &used);
    filter.is_numeric = used == filter.text.size();
  } catch (const std::exception&) {
    filter.is_numeric = false;
  }
  return filter;
}

bool compare_numeric(double lhs, const RowFilter& f) {
  if (f.op == "==") return lhs == f.number;
  if (f.op == "!=") return lhs != f.number;
  if (f.op == "<=") return lhs <= f.number;
  if (f.op == ">=") return lhs >= f.number;
  if (f.op == "<") return lhs < f.number;
  return lhs > f.number;
}

bool filter_matches(const cp::PanelObservation& obs, const RowFilter& f) {
  if (f.field == "region" || f.field == "unit") {
    if (f.op != "==" && f.op != "!=") {
      throw cp::ParseError("filter field '" + f.field +
                           "' only supports == and !=");
    }
    const std::string& id = f.field == "region" ? obs.region_id : obs.unit_id;
    return f.op == "==" ? id == f.text : id != f.text;
  }
  double value = 0.0;
  if (f.field == "age") {
    value = obs.age;
  } else if (f.field == "gender") {
    value = obs.gender;
  } else if (f.field == "year") {
    value = obs.year;
  } else {
    const auto found = obs.extra.find(f.field);
    if (found == obs.extra.end()) {
      throw cp::ParseError("filter field '" + f.field +
                           "' is not a panel column");
    }
    value = found->second;
  }
  if (!f.is_numeric) {
    throw cp::ParseError("filter on '" + f.field + "' needs a numeric value, got '" +
                         f.text + "'");
  }
  return compare_numeric(value, f);
}

// Rebuilds the panel keeping only rows that pass every filter; with a
// history cap, additionally keeps only each unit's most recent `cap` years.
// Cohort assignment is carried over from the full panel so subsetting never
// changes who counts as treated from when.
cp::CohortPanel apply_row_filters(const cp::CohortPanel& panel,
                                  const std::vector<RowFilter>& filters,
                                  std::optional<int> history_cap) {
  const auto observations = panel.to_observations();
  std::map<std::string, int> last_year;
  if (history_cap) {
    for (const auto& obs : observations) {
      auto [it, inserted] = last_year.emplace(obs.unit_id, obs.year);
      if (!inserted && obs.year > it->second) it->second = obs.year;
    }
  }
  cp::PanelBuilder builder;
  builder.set_covariate_names(panel.covariate_names());
  std::set<std::string> kept_units;
  for (const auto& obs : observations) {
    if (history_cap && obs.year <= last_year[obs.unit_id] - *history_cap) {
      continue;
    }
    bool keep = true;
    for (const auto& filter : filters) {
      if (!filter_matches(obs, filter)) {
        keep = false;
        break;
      }
    }
    if (!keep) continue;
    builder.add_observation(obs);
    kept_units.insert(obs.unit_id);
  }
  if (builder.rows() == 0) {
    throw cp::Error("no rows remain after filtering");
  }
  cp::PanelOptions options;
  options.check_staggered = false;
  for (std::int32_t u = 0; u < panel.n_units(); ++u) {
    const int g = panel.first_treated(u);
    if (g == cp::kNever) continue;
    const std::string& id = panel.unit_ids()[u];
    if (kept_units.count(id)) options.first_treated_override[id] = g;
  }
  return builder.build(options);
}

// Rebuilds the panel with cohort years taken from the regional adoption
// table.  The panel CSV only carries row-level indicators, so a unit first
// observed after its region adopted would otherwise be dated to its first
// observed year rather than the adoption year.
cp::CohortPanel with_region_cohorts(const cp::CohortPanel& panel,
                                    const cp::RegionTreatmentTable& table) {
  cp::PanelBuilder builder;
  builder.set_covariate_names(panel.covariate_names());
  for (const auto& obs : panel.to_observations()) builder.add_observation(obs);
  cp::PanelOptions options;
  for (std::int32_t u = 0; u < panel.n_units(); ++u) {
    const std::int32_t region = panel.region(panel.unit_rows_begin(u));
    const auto region_in_table = table.find_region(panel.region_ids()[region]);
    if (!region_in_table) continue;
    const auto year =
        table.first_year(*region_in_table, cp::PolicyKind::BillboardBan);
    if (year) options.first_treated_override[panel.unit_ids()[u]] = *year;
  }
  return builder.build(options);
}

// One resampling cluster per region (all of a region's units move together).
cp::ClusterScheme region_cluster_scheme(const cp::CohortPanel& panel) {
  cp::ClusterScheme scheme;
  for (std::int32_t u = 0; u < panel.n_units(); ++u) {
    scheme.cluster_of[u] = panel.region(panel.unit_rows_begin(u));
  }
  return scheme;
}

// ---------------------------------------------------------------------------
// Estimation configuration: defaults < config file < flags.

const std::vector<std::pair<int, int>> kDefaultWindows = {
    {0, 1}, {0, 3}, {0, 5}, {-1, -1}, {-5, -1}, {-10, -1}};

struct EstimateConfig {
  std::string method = "did";  // "did" or "ifect"
  std::vector<std::string> covariates;
  bool interact = false;
  std::string control_group = "not_yet";  // or "never"
  std::string base_period = "varying";    // or "anchored"
  int e_min = -10;
  int e_max = 5;
  double trim = 0.995;
  std::string cluster = "unit";  // or "region"
  std::vector<std::pair<int, int>> windows = kDefaultWindows;
  std::vector<std::string> filters;
  std::optional<int> history_cap;
  int max_rank = 5;
  std::optional<int> fixed_rank;
  int cv_rounds = 5;
  double holdout_fraction = 0.10;
  double em_tolerance = 1e-7;
  int max_iterations = 2000;
  int bootstrap_reps = 200;
  std::uint64_t seed = 42;
};

void expect_choice(const std::string& key, const std::string& value,
                   std::initializer_list<const char*> choices) {
  for (const char* choice : choices) {
    if (value == choice) return;
  }
  std::string allowed;
  for (const char* choice : choices) {
    if (!allowed.empty()) allowed += ", ";
    allowed += choice;
  }
  throw cp::ParseError("'" + value + "' is not a valid " + key + " (expected " +
                       allowed + ")");
}

std::vector<std::pair<int, int>> parse_window_list(const Json& node) {
  std::vector<std::pair<int, int>> windows;
  for (const auto& entry : node) {
    if (!entry.is_array() || entry.size() != 2) {
      throw cp::ParseError("'windows' entries must be [e_min, e_max] pairs");
    }
    windows.emplace_back(entry[0].get<int>(), entry[1].get<int>());
  }
  return windows;
}

// Applies one config-file object onto `cfg`.  Unknown keys are errors so a
// typo cannot silently fall back to a default.
void apply_config_json(EstimateConfig& cfg, const Json& doc,
                       const std::string& origin) {
  if (!doc.is_object()) {
    throw cp::ParseError(origin + ": estimation config must be a JSON object");
  }
  for (const auto& [key, value] : doc.items()) {
    if (key == "method") {
      cfg.method = value.get<std::string>();
    } else if (key == "covariates") {
      cfg.covariates = value.get<std::vector<std::string>>();
    } else if (key == "interact") {
      cfg.interact = value.get<bool>();
    } else if (key == "control_group") {
      cfg.control_group = value.get<std::string>();
    } else if (key == "base_period") {
      cfg.base_period = value.get<std::string>();
    } else if (key == "e_min") {
      cfg.e_min = value.get<int>();
    } else if (key == "e_max") {
      cfg.e_max = value.get<int>();
    } else if (key == "trim") {
      cfg.trim = value.get<double>();
    } else if (key == "cluster") {
      cfg.cluster = value.get<std::string>();
    } else if (key == "windows") {
      cfg.windows = parse_window_list(value);
    } else if (key == "filters") {
      cfg.filters = value.get<std::vector<std::string>>();
    } else if (key == "history_cap") {
      cfg.history_cap = value.is_null() ? std::optional<int>{}
                                        : std::optional<int>{value.get<int>()};
    } else if (key == "max_rank") {
      cfg.max_rank = value.get<int>();
    } else if (key == "fixed_rank") {
      cfg.fixed_rank = value.is_null() ? std::optional<int>{}
                                       : std::optional<int>{value.get<int>()};
    } else if (key == "cv_rounds") {
      cfg.cv_rounds = value.get<int>();
    } else if (key == "holdout_fraction") {
      cfg.holdout_fraction = value.get<double>();
    } else if (key == "em_tolerance") {
      cfg.em_tolerance = value.get<double>();
    } else if (key == "max_iterations") {
      cfg.max_iterations = value.get<int>();
    } else if (key == "bootstrap_reps") {
      cfg.bootstrap_reps = value.get<int>();
    } else if (key == "seed") {
      cfg.seed = value.get<std::uint64_t>();
    } else {
      throw cp::ParseError(origin + ": unknown config key '" + key + "'");
    }
  }
}

void validate_config(const EstimateConfig& cfg) {
  expect_choice("method", cfg.method, {"did", "ifect"});
  expect_choice("control_group", cfg.control_group, {"not_yet", "never"});
  expect_choice("base_period", cfg.base_period, {"varying", "anchored"});
  expect_choice("cluster", cfg.cluster, {"unit", "region"});
  if (cfg.e_min > cfg.e_max) {
    throw cp::ParseError("e_min exceeds e_max");
  }
}

Json config_to_json(const EstimateConfig& cfg) {
  Json doc;
  doc["method"] = cfg.method;
  doc["covariates"] = cfg.covariates;
  doc["interact"] = cfg.interact;
  doc["control_group"] = cfg.control_group;
  doc["base_period"] = cfg.base_period;
  doc["e_min"] = cfg.e_min;
  doc["e_max"] = cfg.e_max;
  doc["trim"] = cfg.trim;
  doc["cluster"] = cfg.cluster;
  doc["windows"] = Json::array();
  for (const auto& [lo, hi] : cfg.windows) {
    doc["windows"].push_back(Json::array({lo, hi}));
  }
  doc["filters"] = cfg.filters;
  doc["history_cap"] =
      cfg.history_cap ? Json(*cfg.history_cap) : Json(nullptr);
  doc["max_rank"] = cfg.max_rank;
  doc["fixed_rank"] = cfg.fixed_rank ? Json(*cfg.fixed_rank) : Json(nullptr);
  doc["cv_rounds"] = cfg.cv_rounds;
  doc["holdout_fraction"] = cfg.holdout_fraction;
  doc["em_tolerance"] = cfg.em_tolerance;
  doc["max_iterations"] = cfg.max_iterations;
  doc["bootstrap_reps"] = cfg.bootstrap_reps;
  doc["seed"] = cfg.seed;
  return doc;
}

cp::DidConfig to_did_config(const EstimateConfig& cfg) {
  cp::DidConfig did;
  did.control_group = cfg.control_group == "never"
                          ? cp::ControlGroup::NeverTreated
                          : cp::ControlGroup::NotYetTreated;
  did.covariates = cfg.covariates;
  did.interact_covariates = cfg.interact;
  did.base_period = cfg.base_period == "anchored"
                        ? cp::BasePeriodPolicy::AnchorGMinus1Post
                        : cp::BasePeriodPolicy::VaryingPre;
  did.propensity_trim = cfg.trim;
  did.window = {cfg.e_min, cfg.e_max};
  return did;
}

cp::IfectConfig to_ifect_config(const EstimateConfig& cfg) {
  cp::IfectConfig ifect;
  ifect.covariates = cfg.covariates;
  ifect.max_rank = cfg.max_rank;
  ifect.fixed_rank = cfg.fixed_rank;
  ifect.cv_rounds = cfg.cv_rounds;
  ifect.cv_holdout_fraction = cfg.holdout_fraction;
  ifect.em_tolerance = cfg.em_tolerance;
  ifect.max_iterations = cfg.max_iterations;
  ifect.bootstrap_reps = cfg.bootstrap_reps;
  ifect.seed = cfg.seed;
  ifect.windows = cfg.windows;
  return ifect;
}

std::vector<std::string> split_comma_list(const std::string& text) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = text.find(',', start);
    const std::string part = text.substr(
        start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!part.empty()) parts.push_back(part);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return parts;
}

std::pair<int, int> parse_window_token(const std::string& token) {
  const std::size_t colon = token.find(':');
  if (colon == std::string::npos) {
    throw cp::ParseError("window '" + token + "' must be 'e_min:e_max'");
  }
  try {
    return {std::stoi(token.substr(0, colon)),
            std::stoi(token.substr(colon + 1))};
  } catch (const std::exception&) {
    throw cp::ParseError("window '" + token + "' must be 'e_min:e_max'");
  }
}

// ---------------------------------------------------------------------------
// Shared estimation driver (used by `estimate` and per sweep variant).

struct EventRow {
  int event_time = 0;
  double estimate = kNaN, std_error = kNaN, p_value = kNaN;
  double ci_lo = kNaN, ci_hi = kNaN;
  std::int64_t n = 0;  // treated units (did) or imputed cells (ifect)
};

struct WindowRow {
  int e_min = 0, e_max = 0;
  double estimate = kNaN, std_error = kNaN, p_value = kNaN;
  double ci_lo = kNaN, ci_hi = kNaN;
  int n_events = 0;
};

struct EstimateRun {
  std::vector<EventRow> events;
  std::vector<WindowRow> windows;
  std::vector<cp::GroupTimeEffect> group_time;  // did only
  std::vector<cp::WindowAverage> did_windows;   // did only
  cp::EventStudyResult event_study;             // did only
  Json summary;
};

Json panel_summary_json(const cp::CohortPanel& panel,
                        const cp::CohortIndex& index) {
  Json doc;
  doc["rows"] = panel.n_rows();
  doc["units"] = panel.n_units();
  doc["year_min"] = panel.years().min;
  doc["year_max"] = panel.years().max;
  Json cohorts = Json::object();
  for (const int g : index.groups) {
    cohorts[std::to_string(g)] = index.members.at(g).size();
  }
  doc["cohorts"] = cohorts;
  doc["never_treated"] = index.never_treated.size();
  return doc;
}

EstimateRun run_estimation(const cp::CohortPanel& input,
                           const EstimateConfig& cfg, int threads) {
  validate_config(cfg);
  std::vector<RowFilter> filters;
  filters.reserve(cfg.filters.size());
  for (const auto& expr : cfg.filters) filters.push_back(parse_row_filter(expr));

  std::optional<cp::CohortPanel> subset;
  if (!filters.empty() || cfg.history_cap.has_value()) {
    subset = apply_row_filters(input, filters, cfg.history_cap);
  }
  const cp::CohortPanel& panel = subset ? *subset : input;
  const cp::CohortIndex index = cp::build_cohort_index(panel);
  const cp::ClusterScheme scheme = cfg.cluster == "region"
                                       ? region_cluster_scheme(panel)
                                       : cp::ClusterScheme{};

  EstimateRun run;
  run.summary["method"] = cfg.method;
  run.summary["panel"] = panel_summary_json(panel, index);

  if (cfg.method == "did") {
    const cp::DidConfig did_config = to_did_config(cfg);
    cp::DidResult did = cp::estimate_all(panel, index, did_config, threads);
    run.event_study =
        cp::aggregate_event_study(panel, index, did, did_config, scheme);

    for (const auto& point : run.event_study.points) {
      EventRow row;
      row.event_time = point.event_time;
      row.estimate = point.estimate;
      row.std_error = point.std_error;
      row.p_value = point.p_value;
      row.ci_lo = point.ci_lo;
      row.ci_hi = point.ci_hi;
      row.n = point.n_treated;
      run.events.push_back(row);
    }
    Json windows_skipped = Json::array();
    for (const auto& [lo, hi] : cfg.windows) {
      try {
        const cp::WindowAverage window =
            cp::window_average(run.event_study, panel, lo, hi, scheme);
        run.did_windows.push_back(window);
        WindowRow row;
        row.e_min = window.e_min;
        row.e_max = window.e_max;
        row.estimate = window.estimate;
        row.std_error = window.std_error;
        row.p_value = window.p_value;
        row.ci_lo = window.ci_lo;
        row.ci_hi = window.ci_hi;
        row.n_events = hi - lo + 1;
        run.windows.push_back(row);
      } catch (const cp::WindowOutOfRangeError& e) {
        windows_skipped.push_back(
            {{"e_min", lo}, {"e_max", hi}, {"reason", e.what()}});
      }
    }

    run.summary["cells_estimated"] = did.effects.size();
    Json skipped_cells = Json::array();
    for (const auto& skip : did.skipped) {
      skipped_cells.push_back(
          {{"g", skip.g}, {"t", skip.t}, {"reason", skip.reason}});
    }
    run.summary["cells_skipped"] = skipped_cells;
    Json skipped_events = Json::array();
    for (const auto& skip : run.event_study.skipped) {
      skipped_events.push_back(
          {{"event_time", skip.event_time}, {"reason", skip.reason}});
    }
    run.summary["event_times_skipped"] = skipped_events;
    run.summary["windows_skipped"] = windows_skipped;
    run.group_time = std::move(did.effects);
  } else {
    const cp::IfectConfig ifect_config = to_ifect_config(cfg);
    const cp::IfectResult result =
        cp::run_ifect(panel, ifect_config, scheme, threads);

    for (const auto& effect : result.effects) {
      EventRow row;
      row.event_time = effect.event_time;
      row.estimate = effect.estimate;
      row.std_error = effect.std_error;
      row.p_value = effect.p_value;
      row.ci_lo = effect.ci_lo;
      row.ci_hi = effect.ci_hi;
      row.n = effect.n_cells;
      run.events.push_back(row);
    }
    Json windows_skipped = Json::array();
    for (const auto& window : result.windows) {
      if (window.n_events == 0) {
        windows_skipped.push_back({{"e_min", window.e_min},
                                   {"e_max", window.e_max},
                                   {"reason", "no estimated event time falls "
                                              "inside the window"}});
        continue;
      }
      WindowRow row;
      row.e_min = window.e_min;
      row.e_max = window.e_max;
      row.estimate = window.estimate;
      row.std_error = window.std_error;
      row.p_value = window.p_value;
      row.ci_lo = window.ci_lo;
      row.ci_hi = window.ci_hi;
      row.n_events = window.n_events;
      run.windows.push_back(row);
    }

    Json rank;
    rank["selected"] = result.model.rank;
    rank["fixed"] = cfg.fixed_rank.has_value();
    rank["mspe"] = result.selection.mspe;
    rank["scored_cells"] = result.selection.scored_cells;
    run.summary["rank"] = rank;
    run.summary["converged"] = result.model.converged;
    run.summary["iterations"] = result.model.iterations;
    run.summary["ssr"] = result.model.ssr;
    run.summary["covariates_dropped"] = result.model.warnings;
    Json att;
    att["estimate"] = result.att;
    att["std_error"] = result.att_std_error;
    att["p_value"] = result.att_p_value;
    att["ci_lo"] = result.att_ci_lo;
    att["ci_hi"] = result.att_ci_hi;
    run.summary["att"] = att;
    run.summary["excluded_units"] = result.excluded_units;
    run.summary["bootstrap"] = {{"replicates", cfg.bootstrap_reps},
                                {"failures", result.bootstrap_failures}};
    run.summary["windows_skipped"] = windows_skipped;
  }
  return run;
}

void write_event_rows_csv(const std::vector<EventRow>& rows,
                          const std::string& path, const char* count_column) {
  std::string text = "event_time,estimate,std_error,p_value,ci_lo,ci_hi,";
  text += count_column;
  text += "\n";
  for (const auto& row : rows) {
    text += std::to_string(row.event_time) + "," +
            cp::format_double(row.estimate) + "," +
            cp::format_double(row.std_error) + "," +
            cp::format_double(row.p_value) + "," +
            cp::format_double(row.ci_lo) + "," + cp::format_double(row.ci_hi) +
            "," + std::to_string(row.n) + "\n";
  }
  write_text(path, text);
}

void write_window_rows_csv(const std::vector<WindowRow>& rows,
                           const std::string& path) {
  std::string text = "e_min,e_max,estimate,std_error,p_value,ci_lo,ci_hi\n";
  for (const auto& row : rows) {
    text += std::to_string(row.e_min) + "," + std::to_string(row.e_max) + "," +
            cp::format_double(row.estimate) + "," +
            cp::format_double(row.std_error) + "," +
            cp::format_double(row.p_value) + "," +
            cp::format_double(row.ci_lo) + "," + cp::format_double(row.ci_hi) +
            "\n";
  }
  write_text(path, text);
}

// ---------------------------------------------------------------------------
// Subcommand option bags.

struct ReconstructOptions {
  std::string survey_path;
  std::string policy_path;
  std::string out_dir;
  int min_age = 15;
  int earliest_year = 1993;
  int history_cap = 0;  // 0 = uncapped
  std::string date_rule = "calendar";
  bool composition = false;
};

struct PoliciesOptions {
  std::string policy_path;
  std::string out_dir;
  std::string date_rule = "calendar";
  int year_min = 1993;
  int year_max = 2017;
};

struct EstimateOptions {
  std::string panel_path;
  std::string out_dir;
  std::string config_path;
  std::string policy_path;  // optional: date cohorts from regional adoption
  std::string date_rule = "calendar";
  int threads = 1;
  // Flag staging area; only values whose flag was passed override the file.
  std::string method, control_group, base_period, cluster, covariates;
  bool interact = false;
  int e_min = 0, e_max = 0, history_cap = 0;
  double trim = 0.0, holdout_fraction = 0.0, em_tolerance = 0.0;
  int max_rank = 0, fixed_rank = 0, cv_rounds = 0, max_iterations = 0;
  int bootstrap_reps = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> windows;
  std::vector<std::string> filters;
};

struct SimulateOptions {
  std::string spec_path;
  std::string out_dir;
  std::uint64_t seed = 0;
};

struct BenchmarkOptions {
  std::string spec_path;
  std::string out_dir;
  int replications = 0;
  int threads = 1;
};

struct SweepOptions {
  std::string panel_path;
  std::string config_path;
  std::string out_dir;
  std::string policy_path;
  std::string date_rule = "calendar";
  int threads = 1;
};

cp::DateRule parse_date_rule(const std::string& name) {
  expect_choice("date rule", name, {"calendar", "midyear"});
  return name == "midyear" ? cp::DateRule::MidYear : cp::DateRule::CalendarYear;
}

Json parse_json_file(const std::string& path) {
  const std::string text = cp::read_file(path);
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw cp::ParseError(path + ": " + e.what());
  }
}

cp::CohortPanel load_panel(const std::string& panel_path,
                           const std::string& policy_path,
                           const std::string& date_rule) {
  cp::CohortPanel panel = cp::read_panel_csv(panel_path);
  if (policy_path.empty()) return panel;
  const std::vector<cp::PolicyEvent> events = cp::read_policy_csv(policy_path);
  const cp::RegionTreatmentTable table = cp::code_annual_indicators(
      events, panel.years(), parse_date_rule(date_rule));
  return with_region_cohorts(panel, table);
}

// ---------------------------------------------------------------------------
// Subcommands.

int cmd_reconstruct(const ReconstructOptions& opt) {
  ensure_out_dir(opt.out_dir);
  Manifest manifest("reconstruct");
  manifest.add_input(opt.survey_path);
  manifest.add_input(opt.policy_path);

  const std::vector<cp::SurveyRecord> records =
      cp::read_survey_csv(opt.survey_path);
  if (records.empty()) {
    throw cp::Error("survey file '" + opt.survey_path + "' has no records");
  }
  int max_survey_year = opt.earliest_year;
  for (const auto& record : records) {
    max_survey_year = std::max(max_survey_year, record.survey_year);
  }
  const std::vector<cp::PolicyEvent> events =
      cp::read_policy_csv(opt.policy_path);
  const cp::RegionTreatmentTable policies = cp::code_annual_indicators(
      events, {opt.earliest_year, max_survey_year},
      parse_date_rule(opt.date_rule));

  cp::ReconstructionConfig config;
  config.min_age = opt.min_age;
  config.earliest_year = opt.earliest_year;
  if (opt.history_cap > 0) config.history_cap_years = opt.history_cap;

  cp::ReconstructionSummary summary;
  const cp::CohortPanel panel =
      cp::reconstruct_panel(records, config, policies, &summary);

  cp::write_panel_csv(panel, join_path(opt.out_dir, "panel.csv"));
  manifest.add_output("panel.csv");
  write_text(join_path(opt.out_dir, "reconstruction.json"),
             cp::reconstruction_summary_to_json(summary));
  manifest.add_output("reconstruction.json");
  if (opt.composition) {
    const cp::CompositionReport report = cp::composition_report(records, panel);
    cp::write_composition_csv(report,
                              join_path(opt.out_dir, "composition.csv"));
    manifest.add_output("composition.csv");
  }

  Json config_json;
  config_json["min_age"] = opt.min_age;
  config_json["earliest_year"] = opt.earliest_year;
  config_json["history_cap"] =
      opt.history_cap > 0 ? Json(opt.history_cap) : Json(nullptr);
  config_json["date_rule"] = opt.date_rule;
  config_json["composition"] = opt.composition;
  config_json["policy_years"] = Json::array({opt.earliest_year, max_survey_year});
  manifest.set_config(config_json);
  manifest.write(opt.out_dir);
  return 0;
}

int cmd_policies(const PoliciesOptions& opt) {
  if (opt.year_min > opt.year_max) {
    throw cp::ParseError("--year-min exceeds --year-max");
  }
  ensure_out_dir(opt.out_dir);
  Manifest manifest("policies");
  manifest.add_input(opt.policy_path);

  const std::vector<cp::PolicyEvent> events =
      cp::read_policy_csv(opt.policy_path);
  const cp::RegionTreatmentTable table = cp::code_annual_indicators(
      events, {opt.year_min, opt.year_max}, parse_date_rule(opt.date_rule));

  cp::write_region_year_csv(table, join_path(opt.out_dir, "region_year.csv"));
  manifest.add_output("region_year.csv");
  cp::write_adoption_curve_csv(table,
                               join_path(opt.out_dir, "adoption_curve.csv"));
  manifest.add_output("adoption_curve.csv");

  Json config_json;
  config_json["date_rule"] = opt.date_rule;
  config_json["year_min"] = opt.year_min;
  config_json["year_max"] = opt.year_max;
  manifest.set_config(config_json);
  manifest.write(opt.out_dir);
  return 0;
}

EstimateConfig resolve_estimate_config(const EstimateOptions& opt,
                                       const CLI::App* sub) {
  EstimateConfig cfg;
  if (!opt.config_path.empty()) {
    apply_config_json(cfg, parse_json_file(opt.config_path), opt.config_path);
  }
  const auto passed = [sub](const char* flag) { return sub->count(flag) > 0; };
  if (passed("--method")) cfg.method = opt.method;
  if (passed("--covariates")) cfg.covariates = split_comma_list(opt.covariates);
  if (passed("--interact")) cfg.interact = opt.interact;
  if (passed("--control")) cfg.control_group = opt.control_group;
  if (passed("--base")) cfg.base_period = opt.base_period;
  if (passed("--e-min")) cfg.e_min = opt.e_min;
  if (passed("--e-max")) cfg.e_max = opt.e_max;
  if (passed("--trim")) cfg.trim = opt.trim;
  if (passed("--cluster")) cfg.cluster = opt.cluster;
  if (passed("--window")) {
    cfg.windows.clear();
    for (const auto& token : opt.windows) {
      cfg.windows.push_back(parse_window_token(token));
    }
  }
  if (passed("--filter")) cfg.filters = opt.filters;
  if (passed("--history-cap")) cfg.history_cap = opt.history_cap;
  if (passed("--max-rank")) cfg.max_rank = opt.max_rank;
  if (passed("--fixed-rank")) cfg.fixed_rank = opt.fixed_rank;
  if (passed("--cv-rounds")) cfg.cv_rounds = opt.cv_rounds;
  if (passed("--holdout-fraction")) cfg.holdout_fraction = opt.holdout_fraction;
  if (passed("--em-tolerance")) cfg.em_tolerance = opt.em_tolerance;
  if (passed("--max-iterations")) cfg.max_iterations = opt.max_iterations;
  if (passed("--bootstrap-reps")) cfg.bootstrap_reps = opt.bootstrap_reps;
  if (passed("--seed")) cfg.seed = opt.seed;
  return cfg;
}

int cmd_estimate(const EstimateOptions& opt, const CLI::App* sub) {
  ensure_out_dir(opt.out_dir);
  Manifest manifest("estimate");
  manifest.add_input(opt.panel_path);
  if (!opt.config_path.empty()) manifest.add_input(opt.config_path);
  if (!opt.policy_path.empty()) manifest.add_input(opt.policy_path);

  const EstimateConfig cfg = resolve_estimate_config(opt, sub);
  validate_config(cfg);
  const cp::CohortPanel panel =
      load_panel(opt.panel_path, opt.policy_path, opt.date_rule);
  EstimateRun run = run_estimation(panel, cfg, opt.threads);

  if (cfg.method == "did") {
    cp::write_group_time_csv(run.group_time,
                             join_path(opt.out_dir, "group_time.csv"));
    manifest.add_output("group_time.csv");
    cp::write_event_study_csv(run.event_study,
                              join_path(opt.out_dir, "event_study.csv"));
    manifest.add_output("event_study.csv");
    cp::write_windows_csv(run.did_windows,
                          join_path(opt.out_dir, "windows.csv"));
    manifest.add_output("windows.csv");
  } else {
    write_event_rows_csv(run.events, join_path(opt.out_dir, "event_study.csv"),
                         "n_cells");
    manifest.add_output("event_study.csv");
    write_window_rows_csv(run.windows, join_path(opt.out_dir, "windows.csv"));
    manifest.add_output("windows.csv");
  }
  write_text(join_path(opt.out_dir, "summary.json"), run.summary.dump(2) + "\n");
  manifest.add_output("summary.json");

  Json config_json = config_to_json(cfg);
  config_json["cohorts_from_policies"] = !opt.policy_path.empty();
  if (!opt.policy_path.empty()) config_json["policy_date_rule"] = opt.date_rule;
  manifest.set_config(config_json);
  manifest.set_seed(cfg.seed);
  manifest.write(opt.out_dir);
  return 0;
}

int cmd_simulate(const SimulateOptions& opt, const CLI::App* sub) {
  ensure_out_dir(opt.out_dir);
  Manifest manifest("simulate");
  manifest.add_input(opt.spec_path);

  cp::DgpSpec spec = cp::parse_dgp_spec_json(cp::read_file(opt.spec_path));
  if (sub->count("--seed") > 0) spec.seed = opt.seed;
  const cp::SimulatedData data = cp::generate(spec);

  cp::write_panel_csv(data.panel, join_path(opt.out_dir, "panel.csv"));
  manifest.add_output("panel.csv");
  write_text(join_path(opt.out_dir, "truth.json"),
             cp::ground_truth_to_json(data.truth));
  manifest.add_output("truth.json");
  const std::string spec_json = cp::dgp_spec_to_json(spec);
  write_text(join_path(opt.out_dir, "spec.json"), spec_json);
  manifest.add_output("spec.json");

  manifest.set_config(parse_json_file(join_path(opt.out_dir, "spec.json")));
  manifest.set_seed(spec.seed);
  manifest.write(opt.out_dir);
  return 0;
}

int cmd_benchmark(const BenchmarkOptions& opt, const CLI::App* sub) {
  ensure_out_dir(opt.out_dir);
  Manifest manifest("benchmark");
  manifest.add_input(opt.spec_path);

  const Json doc = parse_json_file(opt.spec_path);
  if (!doc.is_object()) {
    throw cp::ParseError(opt.spec_path + ": benchmark spec must be an object");
  }
  cp::BenchmarkRequest request;
  EstimateConfig did_cfg;
  EstimateConfig ifect_cfg;
  for (const auto& [key, value] : doc.items()) {
    if (key == "replications") {
      request.replications = value.get<int>();
    } else if (key == "estimators") {
      request.estimators.clear();
      for (const auto& name : value) {
        const std::string text = name.get<std::string>();
        expect_choice("estimator", text, {"did", "ifect"});
        request.estimators.push_back(text == "did" ? cp::EstimatorKind::Did
                                                   : cp::EstimatorKind::Ifect);
      }
    } else if (key == "specs") {
      if (!value.is_object() || value.empty()) {
        throw cp::ParseError(opt.spec_path +
                             ": 'specs' must be a non-empty object");
      }
      for (const auto& [name, spec_node] : value.items()) {
        request.specs.emplace_back(name,
                                   cp::parse_dgp_spec_json(spec_node.dump()));
      }
    } else if (key == "did") {
      apply_config_json(did_cfg, value, opt.spec_path + ": did");
    } else if (key == "ifect") {
      apply_config_json(ifect_cfg, value, opt.spec_path + ": ifect");
    } else {
      throw cp::ParseError(opt.spec_path + ": unknown field '" + key + "'");
    }
  }
  if (request.specs.empty()) {
    throw cp::ParseError(opt.spec_path + ": benchmark spec needs 'specs'");
  }
  if (request.estimators.empty()) {
    request.estimators.push_back(cp::EstimatorKind::Did);
  }
  if (opt.replications > 0) request.replications = opt.replications;
  request.did = to_did_config(did_cfg);
  request.ifect = to_ifect_config(ifect_cfg);

  const cp::BenchmarkReport report = cp::run_benchmark(request, opt.threads);
  std::fprintf(stderr, "benchmark completed in %.1f s\n",
               report.wallclock_seconds);

  cp::write_benchmark_csv(report, join_path(opt.out_dir, "benchmark.csv"));
  manifest.add_output("benchmark.csv");
  write_text(join_path(opt.out_dir, "benchmark_runs.json"),
             cp::benchmark_runs_to_json(report));
  manifest.add_output("benchmark_runs.json");

  Json config_json;
  config_json["replications"] = request.replications;
  Json estimators = Json::array();
  for (const auto kind : request.estimators) {
    estimators.push_back(cp::estimator_kind_name(kind));
  }
  config_json["estimators"] = estimators;
  Json specs = Json::object();
  for (const auto& [name, spec] : request.specs) {
    specs[name] = Json::parse(cp::dgp_spec_to_json(spec));
  }
  config_json["specs"] = specs;
  config_json["did"] = config_to_json(did_cfg);
  config_json["ifect"] = config_to_json(ifect_cfg);
  manifest.set_config(config_json);
  manifest.write(opt.out_dir);
  return 0;
}

int cmd_sweep(const SweepOptions& opt) {
  ensure_out_dir(opt.out_dir);
  Manifest manifest("sweep");
  manifest.add_input(opt.panel_path);
  manifest.add_input(opt.config_path);
  if (!opt.policy_path.empty()) manifest.add_input(opt.policy_path);

  const Json doc = parse_json_file(opt.config_path);
  if (!doc.is_object()) {
    throw cp::ParseError(opt.config_path + ": sweep config must be an object");
  }
  Json base_node = Json::object();
  Json variants_node = Json::object();
  for (const auto& [key, value] : doc.items()) {
    if (key == "base") {
      base_node = value;
    } else if (key == "variants") {
      variants_node = value;
    } else {
      throw cp::ParseError(opt.config_path + ": unknown field '" + key + "'");
    }
  }
  if (!variants_node.is_object() || variants_node.empty()) {
    throw cp::ParseError(opt.config_path +
                         ": sweep config needs a non-empty 'variants' object");
  }

  const cp::CohortPanel panel =
      load_panel(opt.panel_path, opt.policy_path, opt.date_rule);

  std::string events_csv =
      "variant,event_time,estimate,std_error,p_value,ci_lo,ci_hi,n\n";
  std::string windows_csv =
      "variant,e_min,e_max,estimate,std_error,p_value,ci_lo,ci_hi,n_events\n";
  Json resolved_variants = Json::object();
  for (const auto& [name, overrides] : variants_node.items()) {
    EstimateConfig cfg;
    apply_config_json(cfg, base_node, opt.config_path + ": base");
    apply_config_json(cfg, overrides,
                      opt.config_path + ": variant '" + name + "'");
    const EstimateRun run = run_estimation(panel, cfg, opt.threads);
    const std::string variant = cp::csv_escape(name);
    for (const auto& row : run.events) {
      events_csv += variant + "," + std::to_string(row.event_time) + "," +
                    cp::format_double(row.estimate) + "," +
                    cp::format_double(row.std_error) + "," +
                    cp::format_double(row.p_value) + "," +
                    cp::format_double(row.ci_lo) + "," +
                    cp::format_double(row.ci_hi) + "," + std::to_string(row.n) +
                    "\n";
    }
    for (const auto& row : run.windows) {
      windows_csv += variant + "," + std::to_string(row.e_min) + "," +
                     std::to_string(row.e_max) + "," +
                     cp::format_double(row.estimate) + "," +
                     cp::format_double(row.std_error) + "," +
                     cp::format_double(row.p_value) + "," +
                     cp::format_double(row.ci_lo) + "," +
                     cp::format_double(row.ci_hi) + "," +
                     std::to_string(row.n_events) + "\n";
    }
    resolved_variants[name] = config_to_json(cfg);
  }

  write_text(join_path(opt.out_dir, "sweep_events.csv"), events_csv);
  manifest.add_output("sweep_events.csv");
  write_text(join_path(opt.out_dir, "sweep_windows.csv"), windows_csv);
  manifest.add_output("sweep_windows.csv");

  Json config_json;
  config_json["base"] = base_node;
  config_json["variants"] = resolved_variants;
  config_json["cohorts_from_policies"] = !opt.policy_path.empty();
  if (!opt.policy_path.empty()) config_json["policy_date_rule"] = opt.date_rule;
  manifest.set_config(config_json);
  manifest.write(opt.out_dir);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "causalpanel: smoking-history panel reconstruction and "
      "staggered-adoption policy effect estimation"};
  app.require_subcommand(1);

  ReconstructOptions rec;
  CLI::App* rec_cmd = app.add_subcommand(
      "reconstruct",
      "Rebuild annual smoking panels from retrospective survey records and "
      "join regional policy indicators");
  rec_cmd->add_option("--survey", rec.survey_path, "Survey records CSV")
      ->required();
  rec_cmd->add_option("--policies", rec.policy_path, "Policy events CSV")
      ->required();
  rec_cmd->add_option("--out", rec.out_dir, "Output directory")->required();
  rec_cmd->add_option("--min-age", rec.min_age,
                      "First age with a reconstructed row");
  rec_cmd->add_option("--earliest-year", rec.earliest_year,
                      "First calendar year with a reconstructed row");
  rec_cmd->add_option("--history-cap", rec.history_cap,
                      "Keep at most this many years before each survey");
  rec_cmd->add_option("--date-rule", rec.date_rule,
                      "Adoption year coding: calendar or midyear");
  rec_cmd->add_flag("--composition", rec.composition,
                    "Also write the cross-section vs panel composition table");

  PoliciesOptions pol;
  CLI::App* pol_cmd = app.add_subcommand(
      "policies", "Code regional policy events into annual adoption tables");
  pol_cmd->add_option("--policies", pol.policy_path, "Policy events CSV")
      ->required();
  pol_cmd->add_option("--out", pol.out_dir, "Output directory")->required();
  pol_cmd->add_option("--date-rule", pol.date_rule,
                      "Adoption year coding: calendar or midyear");
  pol_cmd->add_option("--year-min", pol.year_min, "First table year");
  pol_cmd->add_option("--year-max", pol.year_max, "Last table year");

  EstimateOptions est;
  CLI::App* est_cmd = app.add_subcommand(
      "estimate",
      "Estimate dynamic treatment effects on a panel (cohort study or "
      "factor-model imputation)");
  est_cmd->add_option("--panel", est.panel_path, "Panel CSV")->required();
  est_cmd->add_option("--out", est.out_dir, "Output directory")->required();
  est_cmd->add_option("--config", est.config_path,
                      "JSON config file (flags override its values)");
  est_cmd->add_option("--policies", est.policy_path,
                      "Policy events CSV; dates cohorts by regional adoption "
                      "instead of first observed treated year");
  est_cmd->add_option("--date-rule", est.date_rule,
                      "Adoption year coding for --policies: calendar or "
                      "midyear");
  est_cmd->add_option("--method", est.method, "did or ifect");
  est_cmd->add_option("--covariates", est.covariates,
                      "Comma-separated covariate columns (age, gender, or "
                      "panel extras)");
  est_cmd->add_flag("--interact", est.interact,
                    "Add pairwise products of the covariates");
  est_cmd->add_option("--control", est.control_group,
                      "Comparison arm: not_yet or never");
  est_cmd->add_option("--base", est.base_period,
                      "Base period: varying or anchored");
  est_cmd->add_option("--e-min", est.e_min, "Earliest event time");
  est_cmd->add_option("--e-max", est.e_max, "Latest event time");
  est_cmd->add_option("--trim", est.trim,
                      "Propensity threshold treated as common-support failure");
  est_cmd->add_option("--cluster", est.cluster,
                      "Inference clusters: unit or region");
  est_cmd->add_option("--window", est.windows,
                      "Window 'e_min:e_max' to average (repeatable; replaces "
                      "the default set)");
  est_cmd->add_option("--filter", est.filters,
                      "Row predicate 'field op value' applied before "
                      "estimation (repeatable, AND-combined)");
  est_cmd->add_option("--history-cap", est.history_cap,
                      "Keep only each unit's most recent N years");
  est_cmd->add_option("--max-rank", est.max_rank,
                      "Largest factor rank for cross-validation");
  est_cmd->add_option("--fixed-rank", est.fixed_rank,
                      "Skip cross-validation and use this rank");
  est_cmd->add_option("--cv-rounds", est.cv_rounds,
                      "Cross-validation rounds");
  est_cmd->add_option("--holdout-fraction", est.holdout_fraction,
                      "Share of untreated cells held out per round");
  est_cmd->add_option("--em-tolerance", est.em_tolerance,
                      "Relative fitted-change convergence threshold");
  est_cmd->add_option("--max-iterations", est.max_iterations,
                      "Iteration cap for the imputation fit");
  est_cmd->add_option("--bootstrap-reps", est.bootstrap_reps,
                      "Bootstrap replicates (0 disables bootstrap inference)");
  est_cmd->add_option("--seed", est.seed, "Seed for bootstrap resampling");
  est_cmd->add_option("--threads", est.threads,
                      "Worker threads (0 = hardware)");

  SimulateOptions sim;
  CLI::App* sim_cmd = app.add_subcommand(
      "simulate", "Generate a synthetic panel with known effects");
  sim_cmd->add_option("--spec", sim.spec_path, "Generator spec JSON")
      ->required();
  sim_cmd->add_option("--out", sim.out_dir, "Output directory")->required();
  sim_cmd->add_option("--seed", sim.seed, "Override the spec's seed");

  BenchmarkOptions bench;
  CLI::App* bench_cmd = app.add_subcommand(
      "benchmark",
      "Monte Carlo bias / RMSE / coverage study over generator specs");
  bench_cmd->add_option("--spec", bench.spec_path, "Benchmark spec JSON")
      ->required();
  bench_cmd->add_option("--out", bench.out_dir, "Output directory")->required();
  bench_cmd->add_option("--replications", bench.replications,
                        "Override the spec's replication count");
  bench_cmd->add_option("--threads", bench.threads,
                        "Worker threads (0 = hardware)");

  SweepOptions sweep;
  CLI::App* sweep_cmd = app.add_subcommand(
      "sweep",
      "Run a named set of estimation variants on one panel and collect "
      "their event-study and window rows");
  sweep_cmd->add_option("--panel", sweep.panel_path, "Panel CSV")->required();
  sweep_cmd->add_option("--config", sweep.config_path,
                        "Sweep JSON with 'base' and 'variants'")
      ->required();
  sweep_cmd->add_option("--out", sweep.out_dir, "Output directory")->required();
  sweep_cmd->add_option("--policies", sweep.policy_path,
                        "Policy events CSV; dates cohorts by regional "
                        "adoption instead of first observed treated year");
  sweep_cmd->add_option("--date-rule", sweep.date_rule,
                        "Adoption year coding for --policies: calendar or "
                        "midyear");
  sweep_cmd->add_option("--threads", sweep.threads,
                        "Worker threads (0 = hardware)");

  CLI11_PARSE(app, argc, argv);

  const auto started = std::chrono::steady_clock::now();
  int status = 1;
  try {
    if (rec_cmd->parsed()) {
      status = cmd_reconstruct(rec);
    } else if (pol_cmd->parsed()) {
      status = cmd_policies(pol);
    } else if (est_cmd->parsed()) {
      status = cmd_estimate(est, est_cmd);
    } else if (sim_cmd->parsed()) {
      status = cmd_simulate(sim, sim_cmd);
    } else if (bench_cmd->parsed()) {
      status = cmd_benchmark(bench, bench_cmd);
    } else if (sweep_cmd->parsed()) {
      status = cmd_sweep(sweep);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
          .count();
  std::fprintf(stderr, "done in %.2f s\n", elapsed);
  return status;
}
