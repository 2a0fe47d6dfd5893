// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fails. Artifacts go to the directory in argv[1]
// (default: ./acceptance_out).

#include "isr/io.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>

using namespace isr;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Run {
  RunConfig cfg;
  Model model;
  double seconds = 0.0;
  std::string samples_csv;
};

Run train_config(const std::string& name) {
  Run r;
  r.cfg = load_config(fs::path(ISR_CONFIG_DIR) / (name + ".cfg"));
  const auto t0 = Clock::now();
  const Dataset data = make_dataset(r.cfg);
  const Model init = make_model(model_shape(r.cfg), r.cfg.init_seed());
  r.model = train(init, data, r.cfg.train).model;
  r.seconds = seconds_since(t0);
  const Matrix s = sample_posterior(r.model, r.cfg.y_star, r.cfg.n_samples, r.cfg.sample_seed());
  r.samples_csv = format_csv(column_names("x", r.model.dx), s);
  return r;
}

Matrix normal_matrix(Index rows, Index cols, Rng& rng, double sd) {
  std::normal_distribution<double> normal(0.0, sd);
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
  return m;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& title, const Outcome& o) {
  std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << title << " | " << o.detail << std::endl;
  if (!o.pass) ++failures;
}

Outcome guarded(const std::function<Outcome()>& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    return {false, std::string("exception: ") + e.what()};
  }
}

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

// Five-point stencil Jacobian of a stack at one row.
Matrix numeric_jacobian(const InvertibleStack& stack, const Matrix& row, double h = 1e-5) {
  const Index d = row.cols();
  Matrix jac(d, d);
  for (Index c = 0; c < d; ++c) {
    auto at = [&](double k) {
      Matrix p = row;
      p(0, c) += k * h;
      return Matrix(stack_forward(stack, p).out);
    };
    jac.col(c) = ((at(-2) - 8 * at(-1) + 8 * at(1) - at(2)) / (12 * h)).transpose();
  }
  return jac;
}

struct Faithfulness {
  double forward = 0.0;  // max relative deviation of the extracted forward map
  double round_trip = 0.0;
};

// Extracted expressions go through their JSON form first, as a user would load them.
Faithfulness check_extraction(const Model& m, const Matrix& x, const Matrix* cond) {
  const auto set = sym::compose_model(m);
  const LoadedExpressions e = expressions_from_json(Json::parse(expressions_to_json(set).dump()));
  const sym::Compiled fwd(e.forward_map, e.forward.inputs);
  const Matrix out = model_forward(m, x, cond).out;
  Faithfulness f;
  for (Index r = 0; r < x.rows(); ++r) {
    std::vector<double> in;
    for (Index c = 0; c < x.cols(); ++c) in.push_back(x(r, c));
    if (cond) {
      for (Index c = 0; c < cond->cols(); ++c) in.push_back((*cond)(r, c));
    }
    const auto z = fwd(in);
    std::vector<double> back_in;
    for (Index c = 0; c < out.cols(); ++c) {
      const double want = out(r, c);
      f.forward = std::max(f.forward, std::abs(z[static_cast<std::size_t>(c)] - want) / std::max(1.0, std::abs(want)));
      back_in.push_back(z[static_cast<std::size_t>(c)]);
    }
    if (cond) {
      for (Index c = 0; c < cond->cols(); ++c) back_in.push_back((*cond)(r, c));
    }
    const auto back = sym::run_chain(e.inverse, back_in);
    for (Index c = 0; c < x.cols(); ++c) {
      f.round_trip = std::max(f.round_trip, std::abs(back[static_cast<std::size_t>(c)] - x(r, c)) /
                                                std::max(1.0, std::abs(x(r, c))));
    }
  }
  return f;
}

double grid_integral(const Model& m, double x0, double x1, double y0, double y1, double h) {
  const Index nx = static_cast<Index>(std::round((x1 - x0) / h));
  const Index ny = static_cast<Index>(std::round((y1 - y0) / h));
  Matrix pts(nx * ny, 2);
  for (Index i = 0; i < nx; ++i)
    for (Index j = 0; j < ny; ++j) pts.row(i * ny + j) << x0 + (i + 0.5) * h, y0 + (j + 0.5) * h;
  const Vector logp = model_log_density(m, pts);
  double total = 0.0;
  for (Index i = 0; i < logp.size(); ++i) {
    if (std::isfinite(logp(i))) total += std::exp(logp(i));
  }
  return total * h * h;
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path out_dir = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_out");
  fs::create_directories(out_dir);
  std::vector<Run> trained;  // every trained model, for the extraction check

  // 1 and 2: Gaussian map recovery and NLL.
  Run gauss;
  const Outcome c1 = guarded([&] {
    gauss = train_config("gaussian");
    write_text(out_dir / "gaussian_samples.csv", gauss.samples_csv);
    const auto set = sym::compose_model(gauss.model);
    write_text(out_dir / "gaussian_expressions.txt", sym::render_model(set));
    bool affine = true;
    for (const auto& e : set.inverse_map) affine = affine && sym::is_affine(e);
    const sym::Compiled inv(set.inverse_map, set.inverse.inputs);
    const auto at0 = inv({0.0, 0.0});
    const auto e1 = inv({1.0, 0.0});
    const auto e2 = inv({0.0, 1.0});
    const double s1 = e1[0] - at0[0];
    const double s2 = e2[1] - at0[1];
    const double shift = at0[1];
    const bool ok = affine && std::abs(s1 - 0.316) < 0.05 && std::abs(s2 - 0.316) < 0.05 &&
                    std::abs(shift - 3.0) < 0.1 && gauss.seconds < 300;
    return Outcome{ok, fmt("affine=%s inverse scales %.4f %.4f, x2 shift %.4f, cross terms %.2g %.2g, %.0f s",
                           affine ? "yes" : "no", s1, s2, shift, e2[0] - at0[0], e1[1] - at0[1], gauss.seconds)};
  });
  report(1, "Gaussian map recovery", c1);
  if (gauss.model.dx > 0) trained.push_back(gauss);

  report(2, "flow NLL near the analytic optimum", guarded([&] {
           const Matrix fresh = sample_target(DistributionKind::Gaussian, 10000, gauss.cfg.reference_seed());
           const double nll = nll_flow(gauss.model, fresh);
           const double optimum = 1.0 + std::log(0.1);
           return Outcome{std::abs(nll - optimum) < 0.1, fmt("nll %.4f, optimum %.4f", nll, optimum)};
         }));

  // 3: invertibility.
  report(3, "invertibility suite", guarded([&] {
           const auto t0 = Clock::now();
           Rng rng = make_rng(301);
           SubnetSpec spec;
           spec.output_init_scale = 0.2;
           double worst_rt = 0.0, worst_ld = 0.0;
           int bad = 0;
           for (int i = 0; i < 1000; ++i) {
             const Index width = 2 + i % 7;
             const int blocks = 1 + (i / 7) % 6;
             const InvertibleStack stack =
                 InvertibleStack::random(width, 0, blocks, spec, derive_seed(302, static_cast<std::uint64_t>(i)));
             const Matrix x = normal_matrix(1, width, rng, 0.5);
             const MapResult f = stack_forward(stack, x);
             const Matrix back = stack_inverse(stack, f.out);
             const double rt = (back - x).cwiseAbs().maxCoeff() / std::max(1.0, x.cwiseAbs().maxCoeff());
             if (!std::isfinite(rt)) ++bad;
             worst_rt = std::max(worst_rt, rt);
             if (width <= 6) {
               const double ld = std::abs(std::log(std::abs(numeric_jacobian(stack, x).determinant())) - f.logdet(0));
               if (!std::isfinite(ld)) ++bad;
               worst_ld = std::max(worst_ld, ld);
             }
           }
           const double secs = seconds_since(t0);
           return Outcome{bad == 0 && worst_rt < 1e-9 && worst_ld < 1e-4 && secs < 60,
                          fmt("worst round trip %.2e, worst logdet gap %.2e, non-finite %d, %.1f s", worst_rt, worst_ld,
                              bad, secs)};
         }));

  // 4: gradients of every loss.
  report(4, "gradient suite", guarded([&] {
           const auto t0 = Clock::now();
           Rng rng = make_rng(401);
           double worst = 0.0;
           const ModelKind kinds[] = {ModelKind::Isr, ModelKind::Flow, ModelKind::Cisr};
           for (int i = 0; i < 50; ++i) {
             ModelShape s;
             s.kind = kinds[i % 3];
             s.dx = 1 + (i / 3) % 4;
             if (s.kind == ModelKind::Isr) s.dx = std::max<Index>(s.dx, 2);
             s.dy = s.kind == ModelKind::Flow ? 0 : 1 + (i / 12) % 2;
             if (s.kind == ModelKind::Isr) s.dy = std::min(s.dy, s.dx - 1);
             s.blocks = 1 + i % 3;
             s.subnet.hidden_layers = 1 + (i / 5) % 2;
             s.subnet.output_init_scale = 0.5;
             const Model m = make_model(s, derive_seed(402, static_cast<std::uint64_t>(i)));
             Tape tape;
             const Var xv = tape.input("x", m.dx);
             std::optional<Var> yv;
             std::unordered_map<std::string, Matrix> inputs{{"x", normal_matrix(6, m.dx, rng, 0.5)}};
             if (m.dy > 0) {
               yv = tape.input("y", m.dy);
               inputs.emplace("y", normal_matrix(6, m.dy, rng, 0.5));
             }
             const BoundStack bound = bind(tape, m.stack);
             Var loss = model_nll(tape, m, bound, xv, yv);
             if (i % 2 == 1) {
               for (const auto& blk : bound.blocks) {
                 if (!blk) continue;
                 for (const auto& net : blk->nets) loss = tape.add(loss, tape.scale(l05_penalty(tape, net, 0.05), 1e-2));
               }
             }
             tape.forward(inputs);
             worst = std::max(worst, finite_difference_check(tape, loss, 1e-5));
           }
           const double secs = seconds_since(t0);
           return Outcome{worst < 1e-4 && secs < 120, fmt("worst relative gradient error %.2e, %.1f s", worst, secs)};
         }));

  // 5: inverse kinematics.
  Run kin;
  Matrix oracle;
  report(5, "inverse kinematics posterior", guarded([&] {
           const auto t0 = Clock::now();
           kin = train_config("kinematics");
           write_text(out_dir / "kinematics_samples.csv", kin.samples_csv);
           const Matrix samples = sample_posterior(kin.model, kin.cfg.y_star, kin.cfg.n_samples, kin.cfg.sample_seed());
           const RejectionResult rej =
               rejection_sample(kin.cfg.y_star, kin.cfg.eps, kin.cfg.n_reference, kin.cfg.reference_seed());
           oracle = rej.samples;
           write_csv(out_dir / "kinematics_oracle.csv", column_names("x", 4), oracle);
           const MetricsReport r = evaluate_posterior(samples, oracle, kin.cfg.y_star, kin.cfg.sample_seed());
           write_text(out_dir / "kinematics_metrics.json", metrics_to_json(r).dump(2) + "\n");
           const double pos = static_cast<double>((samples.col(1).array() > 0).count()) / static_cast<double>(samples.rows());
           const double secs = seconds_since(t0);
           const bool ok = r.err_post < 0.09 && r.err_resim < 0.06 && pos >= 0.2 && pos <= 0.8 && secs < 1800;
           return Outcome{ok, fmt("Err_post %.4f, Err_resim %.4f, x2>0 share %.3f, train %.0f s, total %.0f s",
                                  r.err_post, r.err_resim, pos, kin.seconds, secs)};
         }));
  if (kin.model.dx > 0) trained.push_back(kin);

  // 6: metric identities.
  report(6, "metric identities", guarded([&] {
           Rng rng = make_rng(601);
           const Matrix a = normal_matrix(1000, 4, rng, 1.0);
           const double self = mmd(a, a);
           Matrix ref = oracle;
           if (ref.rows() == 0) ref = rejection_sample({0.0, 1.5}, 0.02, 200, 602).samples;
           const double resim = resim_error(ref, {0.0, 1.5});
           return Outcome{std::abs(self) <= 1e-6 && resim <= 0.02 * 0.02,
                          fmt("mmd(A,A) %.2e, oracle resim %.2e (n=%ld)", self, resim, static_cast<long>(ref.rows()))};
         }));

  // 8 trains the density models that 7 also checks.
  struct Density {
    const char* name;
    DistributionKind kind;
    double x0, x1, y0, y1;
  };
  const Density densities[] = {{"banana", DistributionKind::Banana, -6, 6, -4, 22},
                               {"ring", DistributionKind::Ring, -5, 5, -5, 5},
                               {"mog", DistributionKind::MoG, -6, 6, -6, 6}};
  bool density_ok = true;
  std::string density_detail;
  for (const auto& d : densities) {
    const Outcome o = guarded([&] {
      Run r = train_config(d.name);
      write_text(out_dir / (std::string(d.name) + "_samples.csv"), r.samples_csv);
      const double mass = grid_integral(r.model, d.x0, d.x1, d.y0, d.y1, 0.05);
      const Matrix samples = sample_posterior(r.model, {}, 10000, r.cfg.sample_seed());
      const double err = mmd(samples, sample_target(d.kind, 10000, r.cfg.reference_seed()));
      trained.push_back(r);
      return Outcome{std::abs(mass - 1.0) <= 0.05 && err < 0.05,
                     fmt("%s mass %.4f mmd %.4f %.0f s", d.name, mass, err, r.seconds)};
    });
    density_ok = density_ok && o.pass;
    density_detail += (density_detail.empty() ? "" : "; ") + o.detail;
  }

  report(7, "extraction faithfulness", guarded([&] {
           Rng rng = make_rng(701);
           double fwd = 0.0, rt = 0.0;
           std::string names;
           for (const Run& r : trained) {
             Matrix x;
             if (r.cfg.is_kinematics()) {
               x = sample_prior(1000, derive_seed(702, 1));
             } else {
               x = sample_target(distribution_from_string(r.cfg.benchmark), 1000, derive_seed(702, 2));
             }
             const Faithfulness f = check_extraction(r.model, x, nullptr);
             fwd = std::max(fwd, f.forward);
             rt = std::max(rt, f.round_trip);
             names += (names.empty() ? "" : ",") + r.cfg.benchmark;
           }
           return Outcome{trained.size() == 5 && fwd < 1e-9 && rt < 1e-6,
                          fmt("%zu models (%s), forward %.2e, inverse round trip %.2e", trained.size(), names.c_str(),
                              fwd, rt)};
         }));

  report(8, "density suite", {density_ok, density_detail});

  report(9, "determinism", guarded([&] {
           const Run g2 = train_config("gaussian");
           const Run k2 = train_config("kinematics");
           const bool g_same = !gauss.samples_csv.empty() && g2.samples_csv == gauss.samples_csv;
           const bool k_same = !kin.samples_csv.empty() && k2.samples_csv == kin.samples_csv;
           return Outcome{g_same && k_same, fmt("gaussian CSV %s, kinematics CSV %s (%zu bytes)",
                                                g_same ? "identical" : "differs", k_same ? "identical" : "differs",
                                                k2.samples_csv.size())};
         }));

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
