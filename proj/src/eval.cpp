#include "cabin/eval.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace cabin {

namespace {

int argmax(const float* z, int n) { return static_cast<int>(std::max_element(z, z + n) - z); }

template <typename F>
void for_batches(std::span<const Image> images, int batch_size, F&& f) {
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(batch_size), images.size() - start);
    f(start, images.subspan(start, count));
  }
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << std::fixed << v;
  return os.str();
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::vector<SeatLabels> predict(ModelF& model, std::span<const Image> images, int batch_size) {
  NoGradGuard guard;
  std::vector<SeatLabels> out;
  out.reserve(images.size());
  const int classes = model.spec().classes;
  for_batches(images, batch_size, [&](std::size_t, std::span<const Image> batch) {
    TensorF z = model.logits(model.encode(to_batch<float>(batch), BatchNormMode::Eval).latent);
    const Index width = z.dim(1);
    for (Index i = 0; i < z.dim(0); ++i) {
      SeatLabels labels{};
      for (int s = 0; s < kNumSeats; ++s) labels[s] = argmax(z.data().data() + i * width + s * classes, classes);
      out.push_back(labels);
    }
  });
  return out;
}

std::vector<Image> reconstruct(ModelF& model, std::span<const Image> images, int batch_size) {
  if (!model.spec().has_decoder()) throw std::invalid_argument("reconstruct: baseline model has no decoder");
  NoGradGuard guard;
  std::vector<Image> out;
  out.reserve(images.size());
  for_batches(images, batch_size, [&](std::size_t, std::span<const Image> batch) {
    auto encoded = model.encode(to_batch<float>(batch), BatchNormMode::Eval);
    TensorF x = model.decode(encoded.latent, encoded.indices, BatchNormMode::Eval);
    const Index h = x.dim(2), w = x.dim(3);
    for (Index i = 0; i < x.dim(0); ++i)
      out.push_back(Eigen::Map<const Image>(x.data().data() + i * h * w, h, w));
  });
  return out;
}

double AccuracyReport::accuracy() const {
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

double AccuracyReport::scene_accuracy() const {
  return scenes == 0 ? 0.0 : static_cast<double>(scenes_correct) / static_cast<double>(scenes);
}

double AccuracyReport::seat_accuracy(int seat) const {
  const auto t = seat_total.at(static_cast<std::size_t>(seat));
  return t == 0 ? 0.0 : static_cast<double>(seat_correct[static_cast<std::size_t>(seat)]) / static_cast<double>(t);
}

AccuracyReport accuracy(std::span<const SeatLabels> predicted, std::span<const SeatLabels> truth) {
  if (predicted.size() != truth.size())
    throw std::invalid_argument("accuracy: " + std::to_string(predicted.size()) + " predictions for " +
                                std::to_string(truth.size()) + " labels");
  AccuracyReport r;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    bool all = true;
    for (int s = 0; s < kNumSeats; ++s) {
      if (truth[i][s] == kNoSeat) continue;
      const bool hit = predicted[i][s] == truth[i][s];
      r.seat_total[s] += 1;
      r.seat_correct[s] += hit;
      r.total += 1;
      r.correct += hit;
      all = all && hit;
    }
    r.scenes += 1;
    r.scenes_correct += all;
  }
  return r;
}

Confusion confusion(std::span<const SeatLabels> predicted, std::span<const SeatLabels> truth) {
  if (predicted.size() != truth.size()) throw std::invalid_argument("confusion: size mismatch");
  Confusion c{};
  for (std::size_t i = 0; i < truth.size(); ++i)
    for (int s = 0; s < kNumSeats; ++s) {
      const int t = truth[i][s], p = predicted[i][s];
      if (t == kNoSeat) continue;
      if (t < 0 || t >= kNumClasses || p < 0 || p >= kNumClasses)
        throw std::out_of_range("confusion: label outside [0,6]");
      c[t][p] += 1;
    }
  return c;
}

double benchmark_score(std::span<const double> domain_accuracies) {
  if (domain_accuracies.empty()) throw std::invalid_argument("benchmark_score: no domains");
  return std::accumulate(domain_accuracies.begin(), domain_accuracies.end(), 0.0) /
         static_cast<double>(domain_accuracies.size());
}

double benchmark_score(const std::map<std::string, double>& domain_accuracies) {
  std::vector<double> values;
  for (const auto& [domain, acc] : domain_accuracies) values.push_back(acc);
  return benchmark_score(values);
}

namespace {

CheckpointResult summarize(const std::string& name, const std::string& train_domain,
                           const std::map<std::string, std::pair<std::vector<SeatLabels>, std::vector<SeatLabels>>>& by_domain) {
  CheckpointResult result{name, train_domain, {}, 0.0};
  std::vector<double> unseen;
  for (const auto& [domain, pt] : by_domain) {
    DomainResult d{domain, accuracy(pt.first, pt.second), confusion(pt.first, pt.second), domain == train_domain};
    if (!d.seen) unseen.push_back(d.report.accuracy());
    result.domains.push_back(std::move(d));
  }
  result.score = unseen.empty() ? 0.0 : benchmark_score(unseen);
  return result;
}

}  // namespace

CheckpointResult evaluate_checkpoint(ModelF& model, const std::string& name, const std::string& train_domain,
                                     const std::vector<LabeledScene>& scenes, std::vector<PredictionRow>* rows,
                                     Split split) {
  std::map<std::string, std::pair<std::vector<SeatLabels>, std::vector<SeatLabels>>> by_domain;
  for (const std::string& domain : domains_of(scenes)) {
    const auto subset = filter_domain(scenes, domain, split);
    if (subset.empty()) continue;
    std::vector<Image> images;
    std::vector<SeatLabels> truth;
    for (const auto& s : subset) {
      images.push_back(s.image);
      truth.push_back(s.labels);
    }
    auto predicted = predict(model, images);
    if (rows)
      for (std::size_t i = 0; i < subset.size(); ++i)
        rows->push_back({name, domain, subset[i].source, truth[i], predicted[i]});
    by_domain[domain] = {std::move(predicted), std::move(truth)};
  }
  if (by_domain.empty()) throw DataError(std::string("evaluate: no ") + to_string(split) + "-split scenes");
  return summarize(name, train_domain, by_domain);
}

void write_predictions_csv(const std::filesystem::path& path, std::span<const PredictionRow> rows) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << "checkpoint,domain,path,true_left,true_middle,true_right,pred_left,pred_middle,pred_right\n";
  auto label = [](int v) { return v == kNoSeat ? std::string("-") : std::to_string(v); };
  for (const auto& r : rows) {
    os << r.checkpoint << ',' << r.domain << ',' << r.path;
    for (int v : r.truth) os << ',' << label(v);
    for (int v : r.predicted) os << ',' << v;
    os << '\n';
  }
}

std::vector<PredictionRow> read_predictions_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  std::vector<PredictionRow> rows;
  std::string line;
  int line_no = 0;
  auto label = [&](const std::string& f) {
    if (f == "-") return kNoSeat;
    try {
      return std::stoi(f);
    } catch (const std::exception&) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": bad label '" + f + "'");
    }
  };
  while (std::getline(is, line)) {
    ++line_no;
    if (line_no == 1 || line.empty()) continue;
    auto f = split_csv(line);
    if (f.size() != 9) throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected 9 fields");
    PredictionRow r{f[0], f[1], f[2], {}, {}};
    for (int s = 0; s < kNumSeats; ++s) {
      r.truth[s] = label(f[3 + s]);
      r.predicted[s] = label(f[6 + s]);
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<CheckpointResult> results_from_predictions(std::span<const PredictionRow> rows,
                                                       const std::map<std::string, std::string>& train_domains) {
  std::vector<std::string> order;
  std::map<std::string, std::map<std::string, std::pair<std::vector<SeatLabels>, std::vector<SeatLabels>>>> grouped;
  for (const auto& r : rows) {
    if (!grouped.count(r.checkpoint)) order.push_back(r.checkpoint);
    auto& pt = grouped[r.checkpoint][r.domain];
    pt.first.push_back(r.predicted);
    pt.second.push_back(r.truth);
  }
  std::vector<CheckpointResult> out;
  for (const auto& name : order) {
    auto it = train_domains.find(name);
    out.push_back(summarize(name, it == train_domains.end() ? "" : it->second, grouped[name]));
  }
  return out;
}

void write_report_csv(const std::filesystem::path& path, std::span<const CheckpointResult> results) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << "checkpoint,train_domain,domain,seen,accuracy,left,middle,right,seats,scenes,scene_accuracy\n";
  for (const auto& r : results)
    for (const auto& d : r.domains) {
      os << r.checkpoint << ',' << r.train_domain << ',' << d.domain << ',' << (d.seen ? 1 : 0) << ','
         << format_double(d.report.accuracy());
      for (int s = 0; s < kNumSeats; ++s)
        os << ',' << (d.report.seat_total[s] ? format_double(d.report.seat_accuracy(s)) : std::string("-"));
      os << ',' << d.report.total << ',' << d.report.scenes << ',' << format_double(d.report.scene_accuracy()) << '\n';
    }
}

void write_cross_matrix_csv(const std::filesystem::path& path, std::span<const CheckpointResult> results) {
  std::set<std::string> domains;
  for (const auto& r : results)
    for (const auto& d : r.domains) domains.insert(d.domain);
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << "checkpoint,train_domain";
  for (const auto& d : domains) os << ',' << d;
  os << '\n';
  for (const auto& r : results) {
    os << r.checkpoint << ',' << r.train_domain;
    for (const auto& name : domains) {
      auto it = std::find_if(r.domains.begin(), r.domains.end(), [&](const DomainResult& d) { return d.domain == name; });
      os << ',' << (it == r.domains.end() ? std::string("") : format_double(it->report.accuracy()));
    }
    os << '\n';
  }
}

void write_confusion_csv(const std::filesystem::path& path, std::span<const CheckpointResult> results) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << "checkpoint,domain,true_class";
  for (int c = 0; c < kNumClasses; ++c) os << ",pred_" << c;
  os << '\n';
  for (const auto& r : results)
    for (const auto& d : r.domains)
      for (int t = 0; t < kNumClasses; ++t) {
        os << r.checkpoint << ',' << d.domain << ',' << t;
        for (int p = 0; p < kNumClasses; ++p) os << ',' << d.confusion[t][p];
        os << '\n';
      }
}

nlohmann::json summary_json(std::span<const CheckpointResult> results) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : results) {
    nlohmann::json domains = nlohmann::json::object();
    for (const auto& d : r.domains)
      domains[d.domain] = {{"accuracy", d.report.accuracy()},
                           {"correct", d.report.correct},
                           {"seats", d.report.total},
                           {"scene_accuracy", d.report.scene_accuracy()},
                           {"scenes", d.report.scenes},
                           {"seen", d.seen}};
    out.push_back({{"checkpoint", r.checkpoint},
                   {"train_domain", r.train_domain},
                   {"benchmark_score", r.score},
                   {"domains", domains}});
  }
  return {{"checkpoints", out}};
}

void write_eval_outputs(const std::filesystem::path& dir, std::span<const CheckpointResult> results) {
  std::filesystem::create_directories(dir);
  write_report_csv(dir / "report.csv", results);
  write_cross_matrix_csv(dir / "cross_matrix.csv", results);
  write_confusion_csv(dir / "confusion.csv", results);
  std::ofstream os(dir / "summary.json");
  if (!os) throw DataError("cannot write " + (dir / "summary.json").string());
  os << summary_json(results).dump(2) << '\n';
}

double masked_mse(const Image& a, const Image& b, const Mask& object_mask) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || a.rows() != object_mask.rows() ||
      a.cols() != object_mask.cols())
    throw ShapeError("masked_mse: size mismatch");
  double total = 0;
  Index count = 0;
  for (Index r = 0; r < a.rows(); ++r)
    for (Index c = 0; c < a.cols(); ++c) {
      if (object_mask(r, c)) continue;
      const double d = static_cast<double>(a(r, c)) - b(r, c);
      total += d * d;
      ++count;
    }
  if (count == 0) throw std::invalid_argument("masked_mse: every pixel is masked");
  return total / static_cast<double>(count);
}

Image montage(std::span<const Image> inputs, std::span<const Image> outputs) {
  if (inputs.size() != outputs.size() || inputs.empty()) throw std::invalid_argument("montage: need matching, non-empty sets");
  const Index h = inputs[0].rows(), w = inputs[0].cols(), gap = 2;
  Image grid = Image::Ones(static_cast<Index>(inputs.size()) * (h + gap) - gap, 2 * w + gap);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Index top = static_cast<Index>(i) * (h + gap);
    grid.block(top, 0, h, w) = inputs[i];
    grid.block(top, w + gap, h, w) = outputs[i];
  }
  return grid;
}

}  // namespace cabin
