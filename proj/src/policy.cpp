#include "causalpanel/policy.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>

#include "causalpanel/csv.hpp"
#include "causalpanel/errors.hpp"

namespace causalpanel {

const char* policy_kind_name(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::BillboardBan: return "billboard";
    case PolicyKind::SalesBan: return "sales";
    case PolicyKind::SmokingBan: return "smoking";
  }
  return "?";
}

PolicyKind parse_policy_kind(const std::string& name) {
  std::string lower;
  lower.reserve(name.size());
  for (char c : name) lower.push_back(static_cast<char>(std::tolower(c)));
  if (lower == "billboard" || lower == "billboard_ban") return PolicyKind::BillboardBan;
  if (lower == "sales" || lower == "sales_ban") return PolicyKind::SalesBan;
  if (lower == "smoking" || lower == "smoking_ban") return PolicyKind::SmokingBan;
  throw ParseError("unknown policy kind '" + name + "'");
}

void parse_iso_date(const std::string& text, int& year, int& month, int& day) {
  auto fail = [&] {
    throw DateParseError("cannot parse '" + text + "' as an ISO date (YYYY-MM-DD)");
  };
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') fail();
  auto parse_part = [&](std::size_t pos, std::size_t len) {
    int value = 0;
    const char* first = text.data() + pos;
    const auto result = std::from_chars(first, first + len, value);
    if (result.ec != std::errc{} || result.ptr != first + len) fail();
    return value;
  };
  year = parse_part(0, 4);
  month = parse_part(5, 2);
  day = parse_part(8, 2);
  if (month < 1 || month > 12 || day < 1) fail();
  static constexpr int kDaysInMonth[12] = {31, 28, 31, 30, 31, 30,
                                           31, 31, 30, 31, 30, 31};
  const bool leap = (year % 4 == 0 && year % 100 != 0) || year % 400 == 0;
  const int days = (month == 2 && leap) ? 29 : kDaysInMonth[month - 1];
  if (day > days) fail();
}

std::optional<std::int32_t> RegionTreatmentTable::find_region(
    const std::string& region_id) const {
  const auto it =
      std::lower_bound(region_ids_.begin(), region_ids_.end(), region_id);
  if (it == region_ids_.end() || *it != region_id) return std::nullopt;
  return static_cast<std::int32_t>(it - region_ids_.begin());
}

int RegionTreatmentTable::indicator(std::int32_t region, int year,
                                    PolicyKind kind) const {
  const std::int32_t start = adoption_year_[static_cast<int>(kind)][region];
  return (start != kNever && year >= start) ? 1 : 0;
}

std::optional<int> RegionTreatmentTable::first_year(std::int32_t region,
                                                    PolicyKind kind) const {
  const std::int32_t start = adoption_year_[static_cast<int>(kind)][region];
  if (start == kNever) return std::nullopt;
  return start;
}

RegionTreatmentTable code_annual_indicators(
    const std::vector<PolicyEvent>& events, YearRange years, DateRule rule) {
  if (years.min > years.max) {
    throw Error("year range is empty");
  }
  RegionTreatmentTable table;
  table.years_ = years;
  for (const auto& event : events) {
    if (std::find(table.region_ids_.begin(), table.region_ids_.end(),
                  event.region_id) == table.region_ids_.end()) {
      table.region_ids_.push_back(event.region_id);
    }
  }
  std::sort(table.region_ids_.begin(), table.region_ids_.end());
  table.adoption_year_.assign(
      kNumPolicyKinds,
      std::vector<std::int32_t>(table.region_ids_.size(), kNever));
  for (const auto& event : events) {
    const auto region = table.find_region(event.region_id);
    auto& slot = table.adoption_year_[static_cast<int>(event.kind)][*region];
    if (slot != kNever) {
      throw DuplicateEventError("region '" + event.region_id +
                                "' has more than one " +
                                policy_kind_name(event.kind) + " ban event");
    }
    // A ban is in force for a whole calendar year from its first year under
    // CalendarYear coding; MidYear pushes second-half starts to the next year.
    int start = event.year;
    if (rule == DateRule::MidYear && event.month >= 7) start = event.year + 1;
    slot = start;
  }
  return table;
}

std::vector<std::pair<int, int>> adoption_curve(const RegionTreatmentTable& table,
                                                PolicyKind kind) {
  std::vector<std::pair<int, int>> curve;
  for (int year = table.years().min; year <= table.years().max; ++year) {
    int count = 0;
    for (std::int32_t r = 0; r < static_cast<std::int32_t>(table.region_ids().size()); ++r) {
      count += table.indicator(r, year, kind);
    }
    curve.emplace_back(year, count);
  }
  return curve;
}

std::vector<PolicyEvent> read_policy_csv(const std::string& path) {
  const CsvTable csv = read_csv(path);
  const std::size_t region_col = csv.column("region_id");
  const std::size_t kind_col = csv.column("policy_kind");
  const std::size_t date_col = csv.column("effective_date");
  std::vector<PolicyEvent> events;
  events.reserve(csv.rows.size());
  for (const auto& row : csv.rows) {
    PolicyEvent event;
    event.region_id = row[region_col];
    event.kind = parse_policy_kind(row[kind_col]);
    parse_iso_date(row[date_col], event.year, event.month, event.day);
    events.push_back(std::move(event));
  }
  return events;
}

void write_region_year_csv(const RegionTreatmentTable& table,
                           const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "region_id,year,billboard,sales,smoking\n";
  for (std::int32_t r = 0; r < static_cast<std::int32_t>(table.region_ids().size()); ++r) {
    for (int year = table.years().min; year <= table.years().max; ++year) {
      out << csv_escape(table.region_ids()[r]) << ',' << year << ','
          << table.indicator(r, year, PolicyKind::BillboardBan) << ','
          << table.indicator(r, year, PolicyKind::SalesBan) << ','
          << table.indicator(r, year, PolicyKind::SmokingBan) << '\n';
    }
  }
  if (!out) throw IoError("failed while writing '" + path + "'");
}

void write_adoption_curve_csv(const RegionTreatmentTable& table,
                              const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "year,billboard,sales,smoking\n";
  const auto billboard = adoption_curve(table, PolicyKind::BillboardBan);
  const auto sales = adoption_curve(table, PolicyKind::SalesBan);
  const auto smoking = adoption_curve(table, PolicyKind::SmokingBan);
  for (std::size_t i = 0; i < billboard.size(); ++i) {
    out << billboard[i].first << ',' << billboard[i].second << ','
        << sales[i].second << ',' << smoking[i].second << '\n';
  }
  if (!out) throw IoError("failed while writing '" + path + "'");
}

}  // namespace causalpanel
