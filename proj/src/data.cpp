#include "panelq/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

namespace panelq {

PanelDataset validate_dataset(const RawRows& rows) {
  const std::size_t n = rows.cluster.size();
  if (rows.y.size() != n) throw DataError("y column length does not match cluster column");
  for (const auto& col : rows.x_cols)
    if (col.size() != n) throw DataError("x column length does not match cluster column");
  for (const auto& col : rows.z_cols)
    if (col.size() != n) throw DataError("z column length does not match cluster column");
  if (rows.x_names.size() != rows.x_cols.size() || rows.z_names.size() != rows.z_cols.size())
    throw DataError("column name/data count mismatch");
  if (n == 0) throw DataError("dataset is empty");

  for (std::size_t r = 0; r < n; ++r) {
    if (!std::isfinite(rows.y[r]))
      throw DataError("non-finite y at row " + std::to_string(r + 1));
    for (std::size_t j = 0; j < rows.x_cols.size(); ++j)
      if (!std::isfinite(rows.x_cols[j][r]))
        throw DataError("non-finite value in column " + rows.x_names[j] + " at row " +
                        std::to_string(r + 1));
    for (std::size_t j = 0; j < rows.z_cols.size(); ++j)
      if (!std::isfinite(rows.z_cols[j][r]))
        throw DataError("non-finite value in column " + rows.z_names[j] + " at row " +
                        std::to_string(r + 1));
  }

  // group row indices by cluster id, order of first appearance
  std::unordered_map<std::string, std::size_t> pos;
  std::vector<std::string> ids;
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t r = 0; r < n; ++r) {
    auto [it, inserted] = pos.try_emplace(rows.cluster[r], groups.size());
    if (inserted) {
      ids.push_back(rows.cluster[r]);
      groups.emplace_back();
    }
    groups[it->second].push_back(r);
  }

  PanelDataset ds;
  ds.x_names.reserve(rows.x_names.size() + 1);
  ds.x_names.push_back("const");
  ds.x_names.insert(ds.x_names.end(), rows.x_names.begin(), rows.x_names.end());
  ds.z_names.push_back("const");
  ds.z_names.insert(ds.z_names.end(), rows.z_names.begin(), rows.z_names.end());
  const int dx = ds.d_x(), dz = ds.d_z();

  ds.clusters.reserve(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& idx = groups[g];
    if (idx.size() < 2)
      throw DataError("cluster too small: '" + ids[g] + "' has " +
                      std::to_string(idx.size()) + " observation(s), need at least 2");
    Cluster c;
    c.id = ids[g];
    const int T = static_cast<int>(idx.size());
    c.y.resize(T);
    c.x.resize(T, dx);
    c.z.resize(dz);
    c.z(0) = 1.0;
    for (int j = 1; j < dz; ++j) c.z(j) = rows.z_cols[j - 1][idx[0]];
    for (int t = 0; t < T; ++t) {
      const std::size_t r = idx[t];
      c.y(t) = rows.y[r];
      c.x(t, 0) = 1.0;
      for (int j = 1; j < dx; ++j) c.x(t, j) = rows.x_cols[j - 1][r];
      for (int j = 1; j < dz; ++j) {
        if (rows.z_cols[j - 1][r] != c.z(j))
          throw DataError("column " + rows.z_names[j - 1] + " varies within cluster '" +
                          ids[g] + "'");
      }
    }
    ds.clusters.push_back(std::move(c));
  }

  ds.x_time_invariant.assign(dx, 1);
  for (const Cluster& c : ds.clusters) {
    for (int j = 0; j < dx; ++j) {
      if (!ds.x_time_invariant[j]) continue;
      for (int t = 1; t < c.x.rows(); ++t) {
        if (c.x(t, j) != c.x(0, j)) {
          ds.x_time_invariant[j] = 0;
          break;
        }
      }
    }
  }

  ds.canonical_order.resize(ds.clusters.size());
  std::iota(ds.canonical_order.begin(), ds.canonical_order.end(), 0);
  std::sort(ds.canonical_order.begin(), ds.canonical_order.end(),
            [&](int a, int b) { return ds.clusters[a].id < ds.clusters[b].id; });
  return ds;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, const std::string& col, std::size_t row) {
  const char* p = s.c_str();
  char* endp = nullptr;
  const double v = std::strtod(p, &endp);
  while (endp && *endp == ' ') ++endp;
  if (endp == p || (endp && *endp != '\0'))
    throw DataError("cannot parse '" + s + "' in column " + col + " at row " +
                    std::to_string(row));
  return v;
}

}  // namespace

PanelDataset read_panel_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": empty file");
  const auto header = split_csv_line(line);

  int cluster_col = -1, y_col = -1;
  std::vector<int> x_idx, z_idx;
  RawRows rows;
  for (std::size_t j = 0; j < header.size(); ++j) {
    const std::string& h = header[j];
    if (h == "cluster") cluster_col = static_cast<int>(j);
    else if (h == "y") y_col = static_cast<int>(j);
    else if (h.rfind("x_", 0) == 0 || h.rfind("z_", 0) == 0) {
      // the prefix marks the level; the covariate name is what follows it
      const std::string name = h.substr(2);
      if (name.empty() || name == "const")
        throw DataError(path + ": column '" + h + "' is not a usable covariate name");
      auto& names = h[0] == 'x' ? rows.x_names : rows.z_names;
      if (std::find(names.begin(), names.end(), name) != names.end())
        throw DataError(path + ": duplicate column '" + h + "'");
      (h[0] == 'x' ? x_idx : z_idx).push_back(static_cast<int>(j));
      names.push_back(name);
    }
    // other columns ignored
  }
  if (cluster_col < 0) throw DataError(path + ": missing required column 'cluster'");
  if (y_col < 0) throw DataError(path + ": missing required column 'y'");
  rows.x_cols.resize(rows.x_names.size());
  rows.z_cols.resize(rows.z_names.size());

  std::size_t rownum = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    ++rownum;
    const auto f = split_csv_line(line);
    if (f.size() != header.size())
      throw DataError(path + ": row " + std::to_string(rownum) + " has " +
                      std::to_string(f.size()) + " fields, header has " +
                      std::to_string(header.size()));
    rows.cluster.push_back(f[cluster_col]);
    rows.y.push_back(parse_double(f[y_col], "y", rownum));
    for (std::size_t j = 0; j < x_idx.size(); ++j)
      rows.x_cols[j].push_back(parse_double(f[x_idx[j]], rows.x_names[j], rownum));
    for (std::size_t j = 0; j < z_idx.size(); ++j)
      rows.z_cols[j].push_back(parse_double(f[z_idx[j]], rows.z_names[j], rownum));
  }
  return validate_dataset(rows);
}

}  // namespace panelq
