#include "vrcv/transport.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "vrcv/csv.hpp"

namespace vrcv::ot {

EmpiricalDistribution EmpiricalDistribution::uniform(Tensor pts) {
  EmpiricalDistribution dist;
  const std::size_t n = pts.dim(0);
  dist.points = std::move(pts);
  dist.weights.assign(n, 1.0 / static_cast<double>(n));
  return dist;
}

CostMatrix cost_matrix(const EmpiricalDistribution& p, const EmpiricalDistribution& q) {
  if (p.points.dim(1) != q.points.dim(1))
    throw std::invalid_argument("cost_matrix: ambient dimensions disagree");
  const std::size_t n = p.points.dim(0), m = q.points.dim(0), d = p.points.dim(1);
  CostMatrix cm{Tensor({n, m})};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = p.points(i, k) - q.points(j, k);
        s += diff * diff;
      }
      cm.c(i, j) = std::sqrt(s);
    }
  return cm;
}

namespace {

struct Arc {
  std::size_t src, dst;  // source row, sink column
  double flow = 0.0;
};

void check_weights(const std::vector<double>& w, const char* side) {
  double sum = 0.0;
  for (double v : w) {
    if (v < 0.0)
      throw std::invalid_argument(std::string("exact_emd: negative weight on ") + side);
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument(std::string("exact_emd: ") + side +
                                " weights must sum to 1, got " + std::to_string(sum));
}

}  // namespace

TransportPlan exact_emd(const Tensor& cost, std::vector<double> a, std::vector<double> b) {
  if (cost.rank() != 2) throw std::invalid_argument("exact_emd: cost must be [n,m]");
  const std::size_t n = cost.dim(0), m = cost.dim(1);
  if (a.size() != n || b.size() != m)
    throw std::invalid_argument("exact_emd: marginal lengths mismatch the cost matrix");
  check_weights(a, "source");
  check_weights(b, "target");

  const std::size_t num_nodes = n + m;  // sources 0..n-1, sinks n..n+m-1
  double cost_scale = 0.0;
  for (double v : cost.data()) cost_scale = std::max(cost_scale, std::abs(v));
  const double eps = 1e-12 * std::max(1.0, cost_scale);

  // northwest corner start: exactly n+m-1 basic arcs, degenerate zeros kept
  std::vector<Arc> basis;
  basis.reserve(num_nodes - 1);
  {
    std::vector<double> ra = a, rb = b;
    std::size_t i = 0, j = 0;
    while (true) {
      const double f = std::max(0.0, std::min(ra[i], rb[j]));
      basis.push_back({i, j, f});
      ra[i] -= f;
      rb[j] -= f;
      if (i + 1 == n && j + 1 == m) break;
      if (i + 1 < n && (ra[i] < rb[j] || j + 1 == m))
        ++i;
      else
        ++j;
    }
  }

  // tree adjacency over basic arcs
  std::vector<std::vector<std::size_t>> adj(num_nodes);
  for (std::size_t k = 0; k < basis.size(); ++k) {
    adj[basis[k].src].push_back(k);
    adj[n + basis[k].dst].push_back(k);
  }

  std::vector<double> u(n), v(m);
  std::vector<std::size_t> parent(num_nodes), parent_arc(num_nodes), depth(num_nodes);
  std::vector<std::size_t> stack;

  auto rebuild_tree = [&]() {
    // DFS from node 0: duals and parent pointers in one pass
    std::vector<char> seen(num_nodes, 0);
    stack.clear();
    stack.push_back(0);
    seen[0] = 1;
    parent[0] = 0;
    depth[0] = 0;
    u[0] = 0.0;
    while (!stack.empty()) {
      const std::size_t x = stack.back();
      stack.pop_back();
      for (std::size_t arc_id : adj[x]) {
        const Arc& arc = basis[arc_id];
        const std::size_t other = (x == arc.src) ? n + arc.dst : arc.src;
        if (seen[other]) continue;
        seen[other] = 1;
        parent[other] = x;
        parent_arc[other] = arc_id;
        depth[other] = depth[x] + 1;
        if (other >= n)
          v[other - n] = cost(arc.src, arc.dst) - u[arc.src];
        else
          u[other] = cost(arc.src, arc.dst) - v[arc.dst];
        stack.push_back(other);
      }
    }
  };

  const std::size_t total_arcs = n * m;
  const std::size_t block =
      std::max<std::size_t>(64, static_cast<std::size_t>(std::sqrt(static_cast<double>(total_arcs))));
  std::size_t cursor = 0;

  const std::size_t max_pivots = 400 * num_nodes + 40000;
  std::size_t pivots = 0;

  rebuild_tree();
  while (true) {
    // block pricing: most negative reduced cost within the first block that
    // contains any violation
    std::size_t enter_i = 0, enter_j = 0;
    double best = -eps;
    bool found = false;
    std::size_t scanned = 0;
    while (scanned < total_arcs) {
      const std::size_t stop = std::min(block, total_arcs - scanned);
      for (std::size_t t = 0; t < stop; ++t) {
        const std::size_t idx = cursor;
        cursor = cursor + 1 == total_arcs ? 0 : cursor + 1;
        const std::size_t i = idx / m, j = idx % m;
        const double rc = cost(i, j) - u[i] - v[j];
        if (rc < best) {
          best = rc;
          enter_i = i;
          enter_j = j;
          found = true;
        }
      }
      scanned += stop;
      if (found) break;
    }
    if (!found) break;  // optimal

    if (++pivots > max_pivots)
      throw std::runtime_error("exact_emd: pivot limit exceeded (degenerate cycling?)");

    // cycle = entering arc + tree path between its endpoints
    std::size_t x = enter_i, y = n + enter_j;
    std::vector<std::size_t> path_x, path_y;  // arc ids towards the apex
    {
      std::size_t px = x, py = y;
      while (depth[px] > depth[py]) {
        path_x.push_back(parent_arc[px]);
        px = parent[px];
      }
      while (depth[py] > depth[px]) {
        path_y.push_back(parent_arc[py]);
        py = parent[py];
      }
      while (px != py) {
        path_x.push_back(parent_arc[px]);
        path_y.push_back(parent_arc[py]);
        px = parent[px];
        py = parent[py];
      }
    }

    // walk the cycle along the entering-arc orientation starting at the
    // apex: apex -> ... -> enter_i -> (entering) -> n+enter_j -> ... -> apex.
    // Arcs traversed source->sink gain theta, the others lose it.
    struct CycleArc {
      std::size_t arc_id;
      bool forward;  // traversed source -> sink
    };
    std::vector<CycleArc> walk;
    walk.reserve(path_x.size() + path_y.size());
    {
      // apex -> enter_i: reverse of path_x; traversal at each step goes from
      // the parent node down to the child node
      std::size_t node = enter_i;
      std::vector<std::pair<std::size_t, bool>> down;  // (arc, child_is_source)
      for (std::size_t arc_id : path_x) {
        down.emplace_back(arc_id, node < n);
        node = parent[node];
      }
      for (auto it = down.rbegin(); it != down.rend(); ++it) {
        // moving parent -> child: forward iff the child is the sink
        walk.push_back({it->first, !it->second});
      }
      // entering arc handled implicitly (always +theta)
      // n+enter_j -> apex: traversal child -> parent; forward iff child is source
      node = n + enter_j;
      for (std::size_t arc_id : path_y) {
        walk.push_back({arc_id, node < n});
        node = parent[node];
      }
    }

    double theta = std::numeric_limits<double>::infinity();
    for (const CycleArc& ca : walk)
      if (!ca.forward) theta = std::min(theta, basis[ca.arc_id].flow);
    // leaving arc: the LAST blocking arc along the oriented walk keeps the
    // tree strongly feasible (anti-cycling)
    std::size_t leave_id = static_cast<std::size_t>(-1);
    for (const CycleArc& ca : walk)
      if (!ca.forward && basis[ca.arc_id].flow <= theta) leave_id = ca.arc_id;
    if (leave_id == static_cast<std::size_t>(-1))
      throw std::runtime_error("exact_emd: unbounded pivot (corrupt basis)");

    for (const CycleArc& ca : walk) {
      Arc& arc = basis[ca.arc_id];
      arc.flow += ca.forward ? theta : -theta;
      if (arc.flow < 0.0) arc.flow = 0.0;  // round-off guard
    }

    // swap leaving arc out of the adjacency, entering arc in
    Arc& slot = basis[leave_id];
    auto drop = [&](std::size_t node, std::size_t arc_id) {
      auto& list = adj[node];
      list.erase(std::find(list.begin(), list.end(), arc_id));
    };
    drop(slot.src, leave_id);
    drop(n + slot.dst, leave_id);
    slot = Arc{enter_i, enter_j, theta};
    adj[enter_i].push_back(leave_id);
    adj[n + enter_j].push_back(leave_id);

    rebuild_tree();
  }

  TransportPlan plan;
  plan.gamma = Tensor({n, m});
  for (const Arc& arc : basis) {
    const double f = std::max(arc.flow, 0.0);
    plan.gamma(arc.src, arc.dst) += f;
    plan.cost += f * cost(arc.src, arc.dst);
  }
  plan.u = std::move(u);
  plan.v = std::move(v);
  return plan;
}

double wasserstein(const EmpiricalDistribution& p, const EmpiricalDistribution& q) {
  const CostMatrix cm = cost_matrix(p, q);
  return exact_emd(cm.c, p.weights, q.weights).cost;
}

Tensor pairwise_fold_distances(const Tensor& latents, std::span<const int> fold_ids,
                               std::size_t k, std::size_t subsample, SeededRng& rng) {
  const std::size_t n = latents.dim(0), d = latents.dim(1);
  if (fold_ids.size() != n)
    throw std::invalid_argument("pairwise_fold_distances: fold id count mismatch");

  std::vector<std::vector<std::size_t>> members(k);
  for (std::size_t i = 0; i < n; ++i) {
    const int f = fold_ids[i];
    if (f < 0 || static_cast<std::size_t>(f) >= k)
      throw std::invalid_argument("pairwise_fold_distances: fold id out of range");
    members[static_cast<std::size_t>(f)].push_back(i);
  }
  for (std::size_t f = 0; f < k; ++f)
    if (members[f].empty())
      throw std::invalid_argument("pairwise_fold_distances: fold " + std::to_string(f) +
                                  " is empty");

  // seeded subsample per fold, deterministic in the fold index
  std::vector<Tensor> clouds(k);
  for (std::size_t f = 0; f < k; ++f) {
    std::vector<std::size_t> rows = members[f];
    if (subsample > 0 && rows.size() > subsample) {
      SeededRng sub = rng.derive("transport.subsample", f);
      sub.shuffle(rows);
      rows.resize(subsample);
      std::sort(rows.begin(), rows.end());
    }
    Tensor cloud({rows.size(), d});
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t p = 0; p < d; ++p) cloud(i, p) = latents(rows[i], p);
    clouds[f] = std::move(cloud);
  }

  Tensor out({k, k});
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j) {
      const double w = wasserstein(EmpiricalDistribution::uniform(clouds[i]),
                                   EmpiricalDistribution::uniform(clouds[j]));
      out(i, j) = w;
      out(j, i) = w;
    }
  return out;
}

void write_distance_csv(const std::string& path, const Tensor& matrix) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_distance_csv: cannot open " + path);
  const std::size_t k = matrix.dim(0);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < matrix.dim(1); ++j) {
      if (j) out << ",";
      out << csv::fmt(matrix(i, j));
    }
    out << "\n";
  }
  if (!out.good()) throw std::runtime_error("write_distance_csv: write failed for " + path);
}

Tensor read_distance_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_distance_csv: cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    for (const std::string& field : csv::split_line(line)) row.push_back(std::stod(field));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("read_distance_csv: empty file " + path);
  Tensor out({rows.size(), rows[0].size()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size())
      throw std::runtime_error("read_distance_csv: ragged rows in " + path);
    for (std::size_t j = 0; j < rows[i].size(); ++j) out(i, j) = rows[i][j];
  }
  return out;
}

}  // namespace vrcv::ot
