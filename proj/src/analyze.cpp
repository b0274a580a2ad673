#include "alter/analyze.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "alter/common.hpp"
#include "alter/config.hpp"
#include "alter/cost_model.hpp"

namespace alter {

namespace {

std::vector<std::vector<int>> read_int_csv(const std::string& path,
                                           const std::string& header,
                                           size_t columns) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::string line;
  if (!std::getline(in, line) || line != header) {
    throw std::runtime_error("malformed CSV header in " + path);
  }
  std::vector<std::vector<int>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<int> row;
    while (std::getline(ss, cell, ',')) row.push_back(std::stoi(cell));
    if (row.size() != columns) {
      throw std::runtime_error("malformed CSV row in " + path + ": " + line);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

const char* kPalette[8] = {"#4269d0", "#efb118", "#ff725c", "#6cc5b0",
                           "#3ca951", "#ff8ab7", "#a463f2", "#97bbf5"};

}  // namespace

MaskSet load_mask_csvs(const std::string& run_dir) {
  const auto mask_rows =
      read_int_csv(run_dir + "/masks.csv", "expert,layer,bit", 3);
  const auto route_rows =
      read_int_csv(run_dir + "/routing.csv", "timestep,expert", 2);
  if (mask_rows.empty() || route_rows.empty()) {
    throw std::runtime_error("empty mask export in " + run_dir);
  }
  int n_experts = 0;
  int n_layers = 0;
  for (const auto& row : mask_rows) {
    n_experts = std::max(n_experts, row[0] + 1);
    n_layers = std::max(n_layers, row[1] + 1);
  }
  MaskSet ms;
  ms.expert_masks = Eigen::MatrixXd::Constant(n_experts, n_layers, -1.0);
  for (const auto& row : mask_rows) {
    if (row[2] != 0 && row[2] != 1) {
      throw std::runtime_error("mask bit outside {0,1} in " + run_dir);
    }
    ms.expert_masks(row[0], row[1]) = row[2];
  }
  if ((ms.expert_masks.array() < 0.0).any()) {
    throw std::runtime_error("masks.csv misses (expert, layer) cells in " + run_dir);
  }
  ms.expert_logits = Eigen::MatrixXd::Zero(n_experts, n_layers);
  const int t_total = static_cast<int>(route_rows.size());
  ms.routing_logits = Eigen::MatrixXd::Zero(t_total, n_experts);
  ms.routing_table.assign(static_cast<size_t>(t_total), 0);
  for (const auto& row : route_rows) {
    const int t = row[0];
    const int e = row[1];
    if (t < 0 || t >= t_total || e < 0 || e >= n_experts) {
      throw std::runtime_error("routing.csv indices out of range in " + run_dir);
    }
    ms.routing_table[static_cast<size_t>(t)] = e;
    ms.routing_logits(t, e) = 1.0;
  }
  return ms;
}

RunAnalysis analyze_run(const std::string& run_dir) {
  const TrainConfig cfg = TrainConfig::parse_file(run_dir + "/config_resolved.txt");
  const MaskSet ms = load_mask_csvs(run_dir);

  RunAnalysis a;
  a.n_experts = static_cast<int>(ms.expert_masks.rows());
  a.n_layers = static_cast<int>(ms.expert_masks.cols());
  a.t_total = static_cast<int>(ms.routing_table.size());
  a.expert_bits = ms.expert_masks;
  a.routing = ms.routing_table;
  a.target = cfg.weights.target_sparsity;

  const CostModel cm = profile_costs(cfg.model);
  const Eigen::VectorXd costs = cm.costs_as_double();
  const double total_cost = costs.sum();

  a.retained_fraction.resize(a.n_experts);
  for (int e = 0; e < a.n_experts; ++e) {
    a.retained_fraction[e] = ms.expert_masks.row(e).dot(costs) / total_cost;
  }
  a.timestep_share = Eigen::VectorXd::Zero(a.n_experts);
  double s_sum = 0.0;
  for (int t = 0; t < a.t_total; ++t) {
    const int e = a.routing[static_cast<size_t>(t)];
    a.timestep_share[e] += 1.0;
    s_sum += a.retained_fraction[e];
  }
  a.timestep_share /= a.t_total;
  a.mean_sparsity = s_sum / a.t_total;
  a.entropy = 0.0;
  for (int e = 0; e < a.n_experts; ++e) {
    const double p = a.timestep_share[e];
    if (p > 0.0) a.entropy -= p * std::log(p);
  }
  return a;
}

std::string analysis_summary(const RunAnalysis& a) {
  std::ostringstream out;
  out << "experts: " << a.n_experts << "  layers: " << a.n_layers
      << "  timesteps: " << a.t_total << '\n';
  for (int e = 0; e < a.n_experts; ++e) {
    int active = 0;
    for (int l = 0; l < a.n_layers; ++l) {
      if (a.expert_bits(e, l) >= 0.5) ++active;
    }
    out << "expert " << e << ": layers " << active << '/' << a.n_layers
        << "  retained-cost " << format_double(a.retained_fraction[e])
        << "  timestep-share " << format_double(a.timestep_share[e]) << '\n';
  }
  out << "mean sparsity S: " << format_double(a.mean_sparsity) << "  (target p "
      << format_double(a.target) << ", gap "
      << format_double(a.mean_sparsity - a.target) << ")\n";
  out << "routing entropy: " << format_double(a.entropy) << " nats (max "
      << format_double(std::log(static_cast<double>(a.n_experts))) << ")\n";
  return out.str();
}

void write_mask_svg(const std::string& path, const RunAnalysis& a) {
  const int cell = 22;
  const int left = 70;
  const int top = 30;
  const int w = left + a.n_layers * cell + 10;
  const int h = top + a.n_experts * cell + 10;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='"
      << h << "' font-family='monospace' font-size='11'>\n";
  out << "<text x='" << left << "' y='14'>expert masks (dark = active layer)</text>\n";
  for (int e = 0; e < a.n_experts; ++e) {
    out << "<text x='6' y='" << top + e * cell + 15 << "'>e" << e << "</text>\n";
    for (int l = 0; l < a.n_layers; ++l) {
      const bool on = a.expert_bits(e, l) >= 0.5;
      out << "<rect x='" << left + l * cell << "' y='" << top + e * cell
          << "' width='" << cell - 2 << "' height='" << cell - 2 << "' fill='"
          << (on ? "#30475e" : "#e6e6e6") << "'/>\n";
    }
  }
  for (int l = 0; l < a.n_layers; ++l) {
    out << "<text x='" << left + l * cell + 4 << "' y='" << top - 4 << "'>" << l
        << "</text>\n";
  }
  out << "</svg>\n";
}

void write_routing_svg(const std::string& path, const RunAnalysis& a) {
  const int cell_w = std::max(3, 600 / std::max(a.t_total, 1));
  const int strip_h = 40;
  const int top = 30;
  const int w = 10 + a.t_total * cell_w + 10;
  const int h = top + strip_h + 40;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='"
      << h << "' font-family='monospace' font-size='11'>\n";
  out << "<text x='10' y='14'>timestep routing (t = 0.." << a.t_total - 1
      << ")</text>\n";
  for (int t = 0; t < a.t_total; ++t) {
    const int e = a.routing[static_cast<size_t>(t)];
    out << "<rect x='" << 10 + t * cell_w << "' y='" << top << "' width='"
        << cell_w << "' height='" << strip_h << "' fill='" << kPalette[e % 8]
        << "'/>\n";
  }
  for (int e = 0; e < a.n_experts; ++e) {
    const int x = 10 + e * 90;
    out << "<rect x='" << x << "' y='" << top + strip_h + 10
        << "' width='12' height='12' fill='" << kPalette[e % 8] << "'/>\n";
    out << "<text x='" << x + 16 << "' y='" << top + strip_h + 20 << "'>expert "
        << e << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace alter
