#include "panelq/model.hpp"

#include <json.hpp>

#include <algorithm>
#include <map>

namespace panelq {

Eigen::VectorXd ModelSpec::pack1(const CoefMatrix& theta) const {
  Eigen::VectorXd out(q1());
  for (int i = 0; i < q1(); ++i) out(i) = theta.values(active1[i].row, active1[i].col);
  return out;
}

Eigen::VectorXd ModelSpec::pack2(const CoefMatrix& phi) const {
  Eigen::VectorXd out(q2());
  for (int i = 0; i < q2(); ++i) out(i) = phi.values(active2[i].row, active2[i].col);
  return out;
}

CoefMatrix ModelSpec::unpack1(const Eigen::VectorXd& par) const {
  CoefMatrix m = CoefMatrix::zeros(mask1);
  for (int i = 0; i < q1(); ++i) m.values(active1[i].row, active1[i].col) = par(i);
  return m;
}

CoefMatrix ModelSpec::unpack2(const Eigen::VectorXd& par) const {
  CoefMatrix m = CoefMatrix::zeros(mask2);
  for (int i = 0; i < q2(); ++i) m.values(active2[i].row, active2[i].col) = par(i);
  return m;
}

namespace {

// pool per-covariate expression lists into a shared basis + masks
void pool_level(const std::vector<std::string>& names,
                const std::vector<std::vector<std::string>>& lists, char var,
                const char* level, BasisSet& basis, MaskMatrix& mask,
                std::vector<Cell>& active) {
  if (lists.size() != names.size())
    throw SpecError(std::string(level) + ": expected one expression list per covariate");
  std::vector<std::string> pooled;          // first-seen source text per element
  std::vector<std::string> keys;            // canonical render per element
  std::vector<std::vector<int>> loads(names.size());
  for (std::size_t j = 0; j < names.size(); ++j) {
    for (const std::string& text : lists[j]) {
      BasisExpr e;
      try {
        e = parse_basis(text);
      } catch (const ParseError& pe) {
        throw SpecError(std::string(level) + " basis for '" + names[j] + "': " + pe.what());
      }
      if (e.var != 0 && e.var != var)
        throw SpecError(std::string(level) + " basis for '" + names[j] + "' uses '" +
                        std::string(1, e.var) + "' but this level is a function of '" +
                        std::string(1, var) + "'");
      const std::string key = render(e.ast);
      auto it = std::find(keys.begin(), keys.end(), key);
      int k;
      if (it == keys.end()) {
        k = static_cast<int>(keys.size());
        keys.push_back(key);
        pooled.push_back(text);
      } else {
        k = static_cast<int>(it - keys.begin());
      }
      loads[j].push_back(k);
    }
  }
  if (pooled.empty())
    throw SpecError(std::string(level) + ": no basis elements given");
  basis = BasisSet::build(pooled, var);
  mask = MaskMatrix::Zero(names.size(), pooled.size());
  for (std::size_t j = 0; j < names.size(); ++j)
    for (int k : loads[j]) mask(j, k) = 1;
  active.clear();
  for (int k = 0; k < mask.cols(); ++k)
    for (int j = 0; j < mask.rows(); ++j)
      if (mask(j, k)) active.push_back({j, k});
}

}  // namespace

ModelSpec make_model_spec(std::vector<std::string> x_names,
                          std::vector<std::string> z_names,
                          const std::vector<std::vector<std::string>>& level1,
                          const std::vector<std::vector<std::string>>& level2) {
  ModelSpec spec;
  spec.x_names = std::move(x_names);
  spec.z_names = std::move(z_names);
  pool_level(spec.x_names, level1, 'u', "level1", spec.basis1, spec.mask1, spec.active1);
  pool_level(spec.z_names, level2, 'v', "level2", spec.basis2, spec.mask2, spec.active2);
  return spec;
}

ModelSpec parse_model_spec(const std::string& json_text,
                           const std::vector<std::string>& x_names,
                           const std::vector<std::string>& z_names,
                           std::vector<std::string>* warnings) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw SpecError(std::string("model spec is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("level1") || !j.contains("level2"))
    throw SpecError("model spec must be an object with 'level1' and 'level2'");

  const auto collect = [&](const nlohmann::json& obj, const std::vector<std::string>& names,
                           const char* level) {
    if (!obj.is_object()) throw SpecError(std::string(level) + " must be an object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
      if (std::find(names.begin(), names.end(), it.key()) == names.end())
        throw SpecError(std::string(level) + ": unknown covariate '" + it.key() + "'");
      if (!it.value().is_array())
        throw SpecError(std::string(level) + "." + it.key() + " must be an array of strings");
    }
    std::vector<std::vector<std::string>> lists(names.size());
    for (std::size_t jx = 0; jx < names.size(); ++jx) {
      if (obj.contains(names[jx])) {
        for (const auto& s : obj.at(names[jx])) {
          if (!s.is_string())
            throw SpecError(std::string(level) + "." + names[jx] +
                            " must be an array of strings");
          lists[jx].push_back(s.get<std::string>());
        }
      }
      if (lists[jx].empty() && warnings)
        warnings->push_back(std::string(level) + ": covariate '" + names[jx] +
                            "' has no basis elements; its coefficient is fixed at zero");
    }
    return lists;
  };

  const auto level1 = collect(j.at("level1"), x_names, "level1");
  const auto level2 = collect(j.at("level2"), z_names, "level2");
  return make_model_spec(x_names, z_names, level1, level2);
}

double quantile_level1(const ModelSpec& spec, const CoefMatrix& theta,
                       const Eigen::VectorXd& x, double u) {
  Eigen::VectorXd b(spec.d_b());
  spec.basis1.eval_into(u, b.data());
  return x.dot(theta.values * b);
}

double quantile_level2(const ModelSpec& spec, const CoefMatrix& phi,
                       const Eigen::VectorXd& z, double v) {
  Eigen::VectorXd c(spec.d_c());
  spec.basis2.eval_into(v, c.data());
  return z.dot(phi.values * c);
}

}  // namespace panelq
