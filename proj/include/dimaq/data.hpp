#pragma once

// Geographic hierarchy, monitor and grid-cell records, and the CSV formats
// used by the pipeline. All loaders validate eagerly and report offending
// file/line/field in the error message.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dimaq/common.hpp"
#include "dimaq/sparse.hpp"

namespace dimaq {

// 0.1-degree grid cell key: floor(lat/0.1) and floor(lon/0.1) packed into one
// 64-bit id. Boundary coordinates round half toward negative infinity.
inline std::int64_t cell_id_from_latlon(double lat, double lon) {
  auto ilat = static_cast<std::int64_t>(std::floor(lat * 10.0));
  auto ilon = static_cast<std::int64_t>(std::floor(lon * 10.0));
  return (ilat << 32) | (ilon & 0xffffffffLL);
}

inline std::pair<double, double> cell_center(std::int64_t cell_id) {
  auto ilat = static_cast<std::int32_t>(cell_id >> 32);
  auto ilon = static_cast<std::int32_t>(cell_id & 0xffffffffLL);
  return {(ilat + 0.5) * 0.1, (ilon + 0.5) * 0.1};
}

enum class Pollutant { Pm25, Pm10 };

struct MonitorRecord {
  long monitor_id = 0;
  double lat = 0.0, lon = 0.0;
  std::int64_t cell_id = 0;
  long country_id = 0;
  double value = 0.0;  // micrograms per cubic meter
  Pollutant pollutant = Pollutant::Pm25;
  int year = 0;
  int x1_type_unspecified = 0;
  int x2_exact_location = 0;
  int x3_converted = 0;  // set by convert_pm10
};

struct GridCellRecord {
  std::int64_t cell_id = 0;
  long country_id = 0;
  double x4_sat = 0.0;
  double x5_tm5 = 0.0;
  double x6_dust = 0.0;
  double x7_snaoc = 0.0;
  double x8_pop = 0.0;
  double x9_edxdu = 0.0;
};

struct GeoHierarchy {
  struct SuperRegion {
    long id;
    std::string name;
  };
  struct Region {
    long id;
    std::string name;
    int super_index;
    bool merged;  // region coincides with its super-region
  };
  struct Country {
    long id;
    std::string name;
    int region_index;
  };

  std::vector<SuperRegion> super_regions;
  std::vector<Region> regions;
  std::vector<Country> countries;
  AdjacencyGraph adjacency;  // over country indices; may be empty

  std::map<long, int> country_by_id, region_by_id, super_by_id;

  int n_countries() const { return static_cast<int>(countries.size()); }

  int country_index(long id) const {
    auto it = country_by_id.find(id);
    return it == country_by_id.end() ? -1 : it->second;
  }

  NestedTree tree() const {
    NestedTree t;
    t.n_super = static_cast<int>(super_regions.size());
    for (const auto& r : regions) t.region_super.push_back(r.super_index);
    for (const auto& c : countries) t.country_region.push_back(c.region_index);
    return t;
  }

  std::vector<std::uint8_t> merged_regions() const {
    std::vector<std::uint8_t> m;
    for (const auto& r : regions) m.push_back(r.merged ? 1 : 0);
    return m;
  }

  void validate(const std::set<long>& single_country_whitelist = {}) const {
    tree().validate();
    std::vector<int> count(regions.size(), 0);
    for (const auto& c : countries) ++count[c.region_index];
    for (std::size_t j = 0; j < regions.size(); ++j)
      if (count[j] < 2 && !single_country_whitelist.count(regions[j].id))
        throw InvalidHierarchyError("region '" + regions[j].name +
                                    "' has fewer than two countries");
    if (adjacency.n > 0 && adjacency.n != n_countries())
      throw InvalidHierarchyError("adjacency graph size does not match country count");
  }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

inline void expect_header(const std::string& got, const std::string& want,
                          const std::string& path) {
  std::string g = got;
  if (!g.empty() && g.back() == '\r') g.pop_back();
  if (g != want)
    throw ValidationError(path + ": expected header '" + want + "', got '" + g + "'");
}

inline double parse_double(const std::string& s, const std::string& path, int line,
                           const std::string& field) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size() && s[pos] != '\r') throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError(path + ":" + std::to_string(line) + ": bad " + field + " '" + s + "'");
  }
}

inline long parse_long(const std::string& s, const std::string& path, int line,
                       const std::string& field) {
  try {
    return std::stol(s);
  } catch (const std::exception&) {
    throw ValidationError(path + ":" + std::to_string(line) + ": bad " + field + " '" + s + "'");
  }
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  return in;
}

}  // namespace detail

// hierarchy.csv:
// country_id,country_name,region_id,region_name,super_region_id,super_region_name
// A region whose name equals its super-region's name is treated as merged
// (region and super-region levels share one deviation).
inline GeoHierarchy load_hierarchy(const std::string& path) {
  auto in = detail::open_input(path);
  std::string line;
  std::getline(in, line);
  detail::expect_header(
      line, "country_id,country_name,region_id,region_name,super_region_id,super_region_name",
      path);
  GeoHierarchy h;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto f = detail::split_csv_line(line);
    if (f.size() != 6)
      throw ValidationError(path + ":" + std::to_string(lineno) + ": expected 6 fields");
    long cid = detail::parse_long(f[0], path, lineno, "country_id");
    long rid = detail::parse_long(f[2], path, lineno, "region_id");
    long sid = detail::parse_long(f[4], path, lineno, "super_region_id");
    std::string sname = f[5];
    if (!sname.empty() && sname.back() == '\r') sname.pop_back();
    if (!h.super_by_id.count(sid)) {
      h.super_by_id[sid] = static_cast<int>(h.super_regions.size());
      h.super_regions.push_back({sid, sname});
    }
    if (!h.region_by_id.count(rid)) {
      h.region_by_id[rid] = static_cast<int>(h.regions.size());
      h.regions.push_back({rid, f[3], h.super_by_id[sid], f[3] == sname});
    } else if (h.regions[h.region_by_id[rid]].super_index != h.super_by_id[sid]) {
      throw InvalidHierarchyError(path + ":" + std::to_string(lineno) + ": region " +
                                  std::to_string(rid) + " listed under two super-regions");
    }
    if (h.country_by_id.count(cid))
      throw InvalidHierarchyError(path + ":" + std::to_string(lineno) + ": duplicate country " +
                                  std::to_string(cid));
    h.country_by_id[cid] = static_cast<int>(h.countries.size());
    h.countries.push_back({cid, f[1], h.region_by_id[rid]});
  }
  return h;
}

// adjacency.csv: country_a,country_b edge list, undirected, deduplicated
inline AdjacencyGraph load_adjacency(const std::string& path, const GeoHierarchy& h) {
  auto in = detail::open_input(path);
  std::string line;
  std::getline(in, line);
  detail::expect_header(line, "country_a,country_b", path);
  std::vector<std::pair<int, int>> edges;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto f = detail::split_csv_line(line);
    if (f.size() != 2)
      throw ValidationError(path + ":" + std::to_string(lineno) + ": expected 2 fields");
    long a = detail::parse_long(f[0], path, lineno, "country_a");
    long b = detail::parse_long(f[1], path, lineno, "country_b");
    int ia = h.country_index(a), ib = h.country_index(b);
    if (ia < 0 || ib < 0)
      throw ValidationError(path + ":" + std::to_string(lineno) + ": unknown country id");
    edges.emplace_back(ia, ib);
  }
  return AdjacencyGraph::from_edges(h.n_countries(), edges);
}

// monitors.csv:
// monitor_id,lat,lon,country_id,year,pollutant,value,type_unspecified,exact_location
inline std::vector<MonitorRecord> load_monitors(const std::string& path,
                                                const GeoHierarchy& h,
                                                int year_min = 1980, int year_max = 2100) {
  auto in = detail::open_input(path);
  std::string line;
  std::getline(in, line);
  detail::expect_header(
      line, "monitor_id,lat,lon,country_id,year,pollutant,value,type_unspecified,exact_location",
      path);
  std::vector<MonitorRecord> out;
  int lineno = 1;
  std::vector<long> unresolved;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto f = detail::split_csv_line(line);
    if (f.size() != 9)
      throw ValidationError(path + ":" + std::to_string(lineno) + ": expected 9 fields");
    MonitorRecord r;
    r.monitor_id = detail::parse_long(f[0], path, lineno, "monitor_id");
    r.lat = detail::parse_double(f[1], path, lineno, "lat");
    r.lon = detail::parse_double(f[2], path, lineno, "lon");
    r.country_id = detail::parse_long(f[3], path, lineno, "country_id");
    r.year = static_cast<int>(detail::parse_long(f[4], path, lineno, "year"));
    std::string pol = f[5];
    if (pol == "pm25")
      r.pollutant = Pollutant::Pm25;
    else if (pol == "pm10")
      r.pollutant = Pollutant::Pm10;
    else
      throw ValidationError(path + ":" + std::to_string(lineno) + ": bad pollutant '" + pol + "'");
    r.value = detail::parse_double(f[6], path, lineno, "value");
    r.x1_type_unspecified = static_cast<int>(detail::parse_long(f[7], path, lineno,
                                                               "type_unspecified"));
    r.x2_exact_location = static_cast<int>(detail::parse_long(f[8], path, lineno,
                                                              "exact_location"));
    if (!(r.value > 0.0))
      throw ValidationError(path + ":" + std::to_string(lineno) + ": value must be positive");
    if (r.year < year_min || r.year > year_max)
      throw ValidationError(path + ":" + std::to_string(lineno) + ": year out of range");
    if (h.country_index(r.country_id) < 0) unresolved.push_back(r.country_id);
    r.cell_id = cell_id_from_latlon(r.lat, r.lon);
    out.push_back(r);
  }
  if (!unresolved.empty()) {
    std::string msg = path + ": unresolved country ids:";
    for (long id : unresolved) msg += " " + std::to_string(id);
    throw ValidationError(msg);
  }
  return out;
}

// cells.csv: cell_id,country_id,x4_sat,x5_tm5,x6_dust,x7_snaoc,x8_pop,x9_edxdu
inline std::vector<GridCellRecord> load_cells(const std::string& path, const GeoHierarchy& h) {
  auto in = detail::open_input(path);
  std::string line;
  std::getline(in, line);
  detail::expect_header(line, "cell_id,country_id,x4_sat,x5_tm5,x6_dust,x7_snaoc,x8_pop,x9_edxdu",
                        path);
  std::vector<GridCellRecord> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto f = detail::split_csv_line(line);
    if (f.size() != 8)
      throw ValidationError(path + ":" + std::to_string(lineno) + ": expected 8 fields");
    GridCellRecord c;
    c.cell_id = detail::parse_long(f[0], path, lineno, "cell_id");
    c.country_id = detail::parse_long(f[1], path, lineno, "country_id");
    c.x4_sat = detail::parse_double(f[2], path, lineno, "x4_sat");
    c.x5_tm5 = detail::parse_double(f[3], path, lineno, "x5_tm5");
    c.x6_dust = detail::parse_double(f[4], path, lineno, "x6_dust");
    c.x7_snaoc = detail::parse_double(f[5], path, lineno, "x7_snaoc");
    c.x8_pop = detail::parse_double(f[6], path, lineno, "x8_pop");
    c.x9_edxdu = detail::parse_double(f[7], path, lineno, "x9_edxdu");
    if (c.x8_pop < 0.0)
      throw ValidationError(path + ":" + std::to_string(lineno) + ": population must be >= 0");
    for (double v : {c.x4_sat, c.x5_tm5, c.x6_dust, c.x7_snaoc})
      if (v < 0.0)
        throw ValidationError(path + ":" + std::to_string(lineno) +
                              ": concentration covariates must be >= 0");
    if (h.country_index(c.country_id) < 0)
      throw ValidationError(path + ":" + std::to_string(lineno) + ": unknown country id " +
                            std::to_string(c.country_id));
    out.push_back(c);
  }
  return out;
}

inline void save_hierarchy(const GeoHierarchy& h, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  out << "country_id,country_name,region_id,region_name,super_region_id,super_region_name\n";
  for (const auto& c : h.countries) {
    const auto& r = h.regions[c.region_index];
    const auto& s = h.super_regions[r.super_index];
    out << c.id << ',' << c.name << ',' << r.id << ',' << r.name << ',' << s.id << ',' << s.name
        << '\n';
  }
}

inline void save_adjacency(const AdjacencyGraph& g, const GeoHierarchy& h,
                           const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  out << "country_a,country_b\n";
  for (int i = 0; i < g.n; ++i)
    for (int j : g.neighbors[i])
      if (i < j) out << h.countries[i].id << ',' << h.countries[j].id << '\n';
}

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

}  // namespace detail

inline void save_monitors(const std::vector<MonitorRecord>& ms, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  out << "monitor_id,lat,lon,country_id,year,pollutant,value,type_unspecified,exact_location\n";
  for (const auto& m : ms)
    out << m.monitor_id << ',' << detail::fmt(m.lat) << ',' << detail::fmt(m.lon) << ','
        << m.country_id << ',' << m.year << ','
        << (m.pollutant == Pollutant::Pm25 ? "pm25" : "pm10") << ',' << detail::fmt(m.value)
        << ',' << m.x1_type_unspecified << ',' << m.x2_exact_location << '\n';
}

inline void save_cells(const std::vector<GridCellRecord>& cs, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  out << "cell_id,country_id,x4_sat,x5_tm5,x6_dust,x7_snaoc,x8_pop,x9_edxdu\n";
  for (const auto& c : cs)
    out << c.cell_id << ',' << c.country_id << ',' << detail::fmt(c.x4_sat) << ','
        << detail::fmt(c.x5_tm5) << ',' << detail::fmt(c.x6_dust) << ',' << detail::fmt(c.x7_snaoc)
        << ',' << detail::fmt(c.x8_pop) << ',' << detail::fmt(c.x9_edxdu) << '\n';
}

}  // namespace dimaq
