// Assembles the eval command's CSV/SVG reports and stdout tables.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "ctrlsynth/error.hpp"
#include "ctrlsynth/evaluation.hpp"
#include "ctrlsynth/nets.hpp"

namespace ctrlsynth {

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string fixed(double v, int digits) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string confusion_csv(const ConfusionMatrix& m) {
  std::ostringstream out;
  out << "prompted";
  for (std::size_t c = 0; c < m.cols(); ++c) out << ",classified_" << c;
  out << '\n';
  for (std::size_t r = 0; r < m.rows(); ++r) {
    out << r;
    for (std::size_t c = 0; c < m.cols(); ++c) out << ',' << num(m.at(r, c));
    out << '\n';
  }
  return out.str();
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
constexpr std::size_t kPaletteSize = sizeof kPalette / sizeof kPalette[0];

std::string svg_header(int width, int height) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
         "\" height=\"" + std::to_string(height) + "\" viewBox=\"0 0 " + std::to_string(width) +
         " " + std::to_string(height) + "\" font-family=\"sans-serif\" font-size=\"11\">\n" +
         "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

// Validation MSE per epoch on a log scale, one line per system.
std::string learning_curves_svg(std::span<const Checkpoint> checkpoints) {
  const double left = 60, top = 20, width = 560, height = 320;
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  std::size_t epochs = 1;
  for (const auto& ck : checkpoints) {
    for (const auto& r : ck.history) {
      lo = std::min(lo, r.val_mse);
      hi = std::max(hi, r.val_mse);
    }
    epochs = std::max(epochs, ck.history.size());
  }
  if (!(lo > 0.0) || !(hi > lo)) {
    lo = 1e-3;
    hi = std::max(hi, 1.0);
  }
  const double l0 = std::floor(std::log10(lo)), l1 = std::ceil(std::log10(hi));
  auto px = [&](double epoch) { return left + width * (epoch - 1) / std::max<double>(1, epochs - 1); };
  auto py = [&](double v) { return top + height * (l1 - std::log10(v)) / std::max(1.0, l1 - l0); };

  std::ostringstream out;
  out << svg_header(static_cast<int>(left + width + 140), static_cast<int>(top + height + 40));
  out << "<g stroke=\"#999\" fill=\"none\">\n";
  out << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << width << "\" height=\""
      << height << "\"/>\n";
  for (double d = l0; d <= l1; d += 1.0) {
    out << "<line x1=\"" << left << "\" x2=\"" << left + width << "\" y1=\"" << py(std::pow(10, d))
        << "\" y2=\"" << py(std::pow(10, d)) << "\" stroke-dasharray=\"2,3\"/>\n";
  }
  out << "</g>\n";
  for (double d = l0; d <= l1; d += 1.0) {
    out << "<text x=\"" << left - 6 << "\" y=\"" << py(std::pow(10, d)) + 4
        << "\" text-anchor=\"end\">1e" << static_cast<int>(d) << "</text>\n";
  }
  out << "<text x=\"" << left + width / 2 << "\" y=\"" << top + height + 30
      << "\" text-anchor=\"middle\">epoch (1.." << epochs << ")</text>\n";
  out << "<text x=\"14\" y=\"" << top + height / 2
      << "\" transform=\"rotate(-90 14 " << top + height / 2
      << ")\" text-anchor=\"middle\">validation MSE per frame</text>\n";
  for (std::size_t s = 0; s < checkpoints.size(); ++s) {
    const auto& ck = checkpoints[s];
    const char* colour = kPalette[s % kPaletteSize];
    out << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& r : ck.history) {
      out << fixed(px(static_cast<double>(r.epoch)), 1) << ',' << fixed(py(r.val_mse), 1) << ' ';
    }
    out << "\"/>\n";
    const double ly = top + 14 + 16 * static_cast<double>(s);
    out << "<line x1=\"" << left + width + 10 << "\" x2=\"" << left + width + 30 << "\" y1=\"" << ly
        << "\" y2=\"" << ly << "\" stroke=\"" << colour << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << left + width + 36 << "\" y=\"" << ly + 4 << "\">"
        << system_name(ck.model.spec.id) << " (best " << ck.epoch << ")</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

struct ScatterPanel {
  std::string system;
  std::vector<LabeledPoint> points;
  PcaResult pca;
};

std::string scatter_svg(const std::vector<ScatterPanel>& panels) {
  const double cell = 260, pad = 30;
  const std::size_t per_row = 3;
  const std::size_t rows = (panels.size() + per_row - 1) / per_row;
  std::ostringstream out;
  out << svg_header(static_cast<int>(per_row * cell),
                    static_cast<int>(std::max<std::size_t>(rows, 1) * cell));
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const auto& panel = panels[p];
    const double ox = cell * static_cast<double>(p % per_row);
    const double oy = cell * static_cast<double>(p / per_row);
    double extent = 1e-12;
    for (std::size_t i = 0; i < panel.pca.coords.rows(); ++i) {
      extent = std::max({extent, std::abs(panel.pca.coords.at(i, 0)),
                         std::abs(panel.pca.coords.at(i, 1))});
    }
    const double half = (cell - 2 * pad) / 2;
    const double cx = ox + cell / 2, cy = oy + cell / 2 + 6;
    out << "<rect x=\"" << ox + pad << "\" y=\"" << cy - half << "\" width=\"" << 2 * half
        << "\" height=\"" << 2 * half << "\" fill=\"none\" stroke=\"#999\"/>\n";
    out << "<text x=\"" << cx << "\" y=\"" << oy + 16 << "\" text-anchor=\"middle\">"
        << panel.system << " PC1 " << fixed(100 * panel.pca.explained_ratio[0], 1) << "% PC2 "
        << fixed(100 * panel.pca.explained_ratio[1], 1) << "%</text>\n";
    for (std::size_t i = 0; i < panel.points.size(); ++i) {
      const double x = cx + half * panel.pca.coords.at(i, 0) / extent;
      const double y = cy - half * panel.pca.coords.at(i, 1) / extent;
      out << "<circle cx=\"" << fixed(x, 1) << "\" cy=\"" << fixed(y, 1) << "\" r=\"2.5\" fill=\""
          << kPalette[static_cast<std::size_t>(panel.points[i].label) % kPaletteSize]
          << "\" fill-opacity=\"0.8\"/>\n";
    }
  }
  out << "</svg>\n";
  return out.str();
}

bool has_inferred_latents(const Model& m) {
  return m.spec.scheme == LatentScheme::kCodebook || m.spec.scheme == LatentScheme::kLatentTable ||
         m.spec.scheme == LatentScheme::kGaussianPosterior;
}

}  // namespace

EvalReport evaluate_run(std::span<Checkpoint> checkpoints, const StyleCorpus& corpus,
                        const EvalOptions& options) {
  const GeneratorTruth& truth = corpus.require_truth();
  EvalReport report;
  report.metrics = mse_table(checkpoints, corpus);
  report.files["metrics_table.csv"] = metrics_table_csv(report.metrics);

  const Tensor identity = Tensor::identity(truth.styles.rows());
  const auto natural = natural_outputs(corpus);
  const ConfusionMatrix nat = oracle_classify(natural, truth);
  report.natural_to_identity = confusion_frobenius(nat, identity);
  report.files["confusion_NAT.csv"] = confusion_csv(nat);

  std::vector<ScatterPanel> panels;
  for (Checkpoint& ck : checkpoints) {
    Model& model = ck.model;
    const std::string name = system_name(model.spec.id);

    if (model.spec.scheme == LatentScheme::kNone) {
      // No control input: classify the style-blind output itself.
      std::vector<StyledOutput> outs;
      for (const Sequence* s : corpus.split(Split::kTest)) {
        outs.push_back({s->id, s->label, &s->tokens, decode(model.decoder, s->linguistic, nullptr)});
      }
      const ConfusionMatrix m = oracle_classify(outs, truth);
      report.confusion.push_back(
          {name, "none", confusion_frobenius(m, identity), confusion_frobenius(m, nat)});
      report.files["confusion_" + name + "_none.csv"] = confusion_csv(m);
    } else {
      for (ControlScheme scheme : options.schemes) {
        const auto outs = control_scheme_outputs(model, corpus, scheme);
        const ConfusionMatrix m = oracle_classify(outs.outputs, truth);
        report.confusion.push_back({name, control_scheme_name(scheme),
                                    confusion_frobenius(m, identity), confusion_frobenius(m, nat)});
        report.files["confusion_" + name + "_" + control_scheme_name(scheme) + ".csv"] =
            confusion_csv(m);
      }
    }

    if (model.spec.scheme == LatentScheme::kCodebook) {
      const auto assignments = code_assignments(model, corpus, Split::kTest);
      report.clusters[name] = cluster_metrics(assignments);
    }
    if (model.spec.scheme == LatentScheme::kLatentTable) {
      const auto points = split_latents(model, corpus, Split::kTest);
      report.knn[name] = knn_disagreement(points, std::min(options.knn_k, points.size() - 1));
    }
    if (has_inferred_latents(model)) {
      ScatterPanel panel{name, split_latents(model, corpus, Split::kTest), {}};
      std::vector<Tensor> zs;
      for (const auto& p : panel.points) zs.push_back(p.z);
      panel.pca = pca_project(zs);
      panels.push_back(std::move(panel));
    }
  }

  {
    std::ostringstream out;
    out << "# NMI = I(cluster;label) / max(H(cluster), H(label)), entropies in bits; test split\n";
    out << "system,label,sequences,indices_used,index_entropy_bits,purity,nmi\n";
    for (const auto& [name, m] : report.clusters) {
      out << name << ",all," << m.points << ',' << m.clusters_used << ','
          << num(m.cluster_entropy_bits) << ',' << num(m.purity) << ',' << num(m.nmi) << '\n';
      for (const auto& [label, h] : m.label_entropy) {
        out << name << ',' << label << ',' << m.label_counts.at(label) << ','
            << m.label_clusters.at(label) << ',' << num(h) << ",,\n";
      }
    }
    report.files["cluster_report.csv"] = out.str();
  }
  {
    std::ostringstream out;
    out << "system,points,k,nearest_disagree,any_disagree,nearest_disagree_rate\n";
    for (const auto& [name, c] : report.knn) {
      out << name << ',' << c.points << ',' << c.k << ',' << c.nearest_disagree << ','
          << c.any_disagree << ','
          << num(static_cast<double>(c.nearest_disagree) / static_cast<double>(c.points)) << '\n';
    }
    report.files["knn_report.csv"] = out.str();
  }
  {
    std::ostringstream out;
    out << "system,scheme,frobenius_to_identity,frobenius_to_natural\n";
    out << "NAT,natural," << num(report.natural_to_identity) << ",0\n";
    for (const auto& r : report.confusion) {
      out << r.system << ',' << r.scheme << ',' << num(r.to_identity) << ',' << num(r.to_natural)
          << '\n';
    }
    report.files["confusion_distances.csv"] = out.str();
  }
  {
    std::size_t dim = 0;
    for (const auto& p : panels) {
      for (const auto& pt : p.points) dim = std::max(dim, pt.z.size());
    }
    std::ostringstream out;
    out << "system,id,label";
    for (std::size_t d = 1; d <= dim; ++d) out << ",z_" << d;
    out << ",pc1,pc2\n";
    for (const auto& p : panels) {
      for (std::size_t i = 0; i < p.points.size(); ++i) {
        const auto& pt = p.points[i];
        out << p.system << ',' << pt.id << ',' << pt.label;
        for (std::size_t d = 0; d < dim; ++d) {
          out << ',';
          if (d < pt.z.size()) out << num(pt.z[d]);
        }
        out << ',' << num(p.pca.coords.at(i, 0)) << ',' << num(p.pca.coords.at(i, 1)) << '\n';
      }
    }
    report.files["scatter.csv"] = out.str();
  }
  report.files["learning_curves.svg"] = learning_curves_svg(checkpoints);
  report.files["scatter.svg"] = scatter_svg(panels);

  std::ostringstream s;
  s << "MSE per frame (floor " << fixed(mse_floor(corpus.config), 4) << ", style gap "
    << fixed(between_style_gap(corpus.config), 4) << ")\n";
  s << "system   params  best  train     val       test\n";
  for (const auto& r : report.metrics) {
    char line[128];
    std::snprintf(line, sizeof line, "%-6s %8zu %5zu  %.4f    %.4f    %.4f\n", r.system.c_str(),
                  r.params, r.best_epoch, r.train_mse, r.val_mse, r.test_mse);
    s << line;
  }
  if (!report.clusters.empty()) {
    s << "\nCodeword clustering, test split (NMI normalised by max entropy)\n";
    s << "system  indices  purity  NMI     per-style index entropy (bits)\n";
    for (const auto& [name, m] : report.clusters) {
      char line[128];
      std::snprintf(line, sizeof line, "%-6s  %7zu  %.4f  %.4f ", name.c_str(), m.clusters_used,
                    m.purity, m.nmi);
      s << line;
      for (const auto& [label, h] : m.label_entropy) s << ' ' << fixed(h, 2);
      s << '\n';
    }
  }
  if (!report.knn.empty()) {
    s << "\nNearest-neighbour style disagreement, test split\n";
    for (const auto& [name, c] : report.knn) {
      s << name << ": " << c.nearest_disagree << " of " << c.points << " (1-NN), "
        << c.any_disagree << " of " << c.points << " (any of " << c.k << ")\n";
    }
  }
  s << "\nOracle confusion, Frobenius distance (NAT to identity "
    << fixed(report.natural_to_identity, 4) << ")\n";
  s << "system  scheme          to identity  to natural\n";
  for (const auto& r : report.confusion) {
    char line[128];
    std::snprintf(line, sizeof line, "%-6s  %-14s  %.4f       %.4f\n", r.system.c_str(),
                  r.scheme.c_str(), r.to_identity, r.to_natural);
    s << line;
  }
  report.summary = s.str();
  return report;
}

}  // namespace ctrlsynth
