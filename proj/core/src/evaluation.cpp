#include "irview/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "irview/checkpoint.hpp"
#include "irview/errors.hpp"

namespace irview {

namespace {

constexpr std::size_t kChunk = 64;

std::span<const float> row(const Tensor<float>& t, std::size_t i) {
  const std::size_t width = t.size() / static_cast<std::size_t>(t.dim(0));
  return t.values().subspan(i * width, width);
}

std::string key_fields(const SampleKey& k) {
  return std::to_string(k.class_id) + ',' + format_double(k.azimuth_deg) + ',' + std::to_string(regime_flag(k.regime)) +
         ',' + format_double(k.range_m);
}

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

std::string checkpoint_id(Predictor<float>& model) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(weights_hash(model.parameters())));
  return buf;
}

EvalReport average_test_error(const Predictor<float>& model, std::span<const ViewSample> corpus,
                              std::span<const ViewPair> test_pairs, const EmbeddingTable& targets,
                              const EvalMetadata& metadata) {
  if (test_pairs.empty()) throw DomainError("average_test_error: empty test set");
  EvalReport report;
  report.metadata = metadata;
  report.pairs.reserve(test_pairs.size());

  for (std::size_t lo = 0; lo < test_pairs.size(); lo += kChunk) {
    const std::size_t hi = std::min(test_pairs.size(), lo + kChunk);
    std::vector<const Raster*> inputs;
    std::vector<PoseVector> poses;
    for (std::size_t i = lo; i < hi; ++i) {
      const ViewPair& p = test_pairs[i];
      if (p.input >= corpus.size() || p.target >= corpus.size())
        throw LookupError("average_test_error: pair refers to a view outside the corpus");
      inputs.push_back(&corpus[p.input].image);
      poses.push_back(p.pose);
    }
    const auto out = model.forward(images_to_batch<float>(std::span<const Raster* const>(inputs)),
                                   poses_to_batch<float>(poses));
    for (std::size_t i = lo; i < hi; ++i) {
      const ViewSample& target = corpus[test_pairs[i].target];
      const auto& e2 = lookup_embedding(targets, target.key);
      const auto y1 = row(out.prediction, i - lo);
      const auto y2 = target.image.values();
      PairError pe;
      pe.input = corpus[test_pairs[i].input].key;
      pe.target = target.key;
      pe.loss.embedding = mse(row(out.post_fusion, i - lo), std::span<const float>(e2));
      pe.loss.output = mse(y1, y2);
      pe.loss.total = pe.loss.embedding + pe.loss.output;
      double abs_sum = 0.0;
      for (std::size_t j = 0; j < y1.size(); ++j) abs_sum += std::abs(static_cast<double>(y1[j]) - y2[j]);
      pe.mean_abs_pixel = abs_sum / static_cast<double>(y1.size());
      report.pairs.push_back(pe);
    }
  }

  std::map<int, ClassError> classes;
  for (const auto& pe : report.pairs) {
    report.average.embedding += pe.loss.embedding;
    report.average.output += pe.loss.output;
    report.mean_abs_pixel += pe.mean_abs_pixel;
    auto& c = classes[pe.target.class_id];
    c.class_id = pe.target.class_id;
    ++c.pairs;
    c.mean.embedding += pe.loss.embedding;
    c.mean.output += pe.loss.output;
    c.mean_abs_pixel += pe.mean_abs_pixel;
  }
  const auto n = static_cast<double>(report.pairs.size());
  report.average.embedding /= n;
  report.average.output /= n;
  report.average.total = report.average.embedding + report.average.output;
  report.mean_abs_pixel /= n;
  for (auto& [id, c] : classes) {
    const auto m = static_cast<double>(c.pairs);
    c.mean.embedding /= m;
    c.mean.output /= m;
    c.mean.total = c.mean.embedding + c.mean.output;
    c.mean_abs_pixel /= m;
    report.per_class.push_back(c);
  }
  return report;
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os << "label: " << metadata.label << "\nseed: " << metadata.seed << "\ncheckpoint: " << metadata.checkpoint_id
     << "\ntest pairs: " << pairs.size() << "\n\n";
  os << std::scientific << std::setprecision(4);
  os << std::setw(8) << "class" << std::setw(8) << "pairs" << std::setw(13) << "L_o" << std::setw(13) << "L_e"
     << std::setw(13) << "L_t" << std::setw(13) << "mean|dy|" << '\n';
  const auto line = [&](const std::string& name, std::size_t count, const LossBreakdown& l, double mad) {
    os << std::setw(8) << name << std::setw(8) << count << std::setw(13) << l.output << std::setw(13) << l.embedding
       << std::setw(13) << l.total << std::setw(13) << mad << '\n';
  };
  for (const auto& c : per_class) line(std::to_string(c.class_id), c.pairs, c.mean, c.mean_abs_pixel);
  line("all", pairs.size(), average, mean_abs_pixel);
  return os.str();
}

std::string EvalReport::to_records() const {
  std::ostringstream os;
  os << "meta,label," << metadata.label << '\n';
  os << "meta,seed," << metadata.seed << '\n';
  os << "meta,checkpoint," << metadata.checkpoint_id << '\n';
  os << "average," << pairs.size() << ',' << format_double(average.output) << ',' << format_double(average.embedding)
     << ',' << format_double(average.total) << ',' << format_double(mean_abs_pixel) << '\n';
  for (const auto& c : per_class)
    os << "class," << c.class_id << ',' << c.pairs << ',' << format_double(c.mean.output) << ','
       << format_double(c.mean.embedding) << ',' << format_double(c.mean.total) << ','
       << format_double(c.mean_abs_pixel) << '\n';
  for (const auto& p : pairs)
    os << "pair," << key_fields(p.input) << ',' << key_fields(p.target) << ',' << format_double(p.loss.output) << ','
       << format_double(p.loss.embedding) << ',' << format_double(p.loss.total) << ','
       << format_double(p.mean_abs_pixel) << '\n';
  return os.str();
}

std::vector<PoseRequest> pose_circle(double step_deg, std::span<const Regime> regimes) {
  if (!(step_deg > 0.0) || step_deg > 360.0) throw DomainError("pose_circle: step must be in (0, 360]");
  std::vector<PoseRequest> out;
  for (Regime r : regimes)
    for (int i = 0; i * step_deg < 360.0 - 1e-9; ++i) out.push_back({i * step_deg, r});
  return out;
}

std::vector<ViewSample> generate_class_corpus(const Predictor<float>& model, std::span<const ViewSample> seeds,
                                              std::span<const PoseRequest> requests, double min_variance) {
  if (seeds.empty()) throw DomainError("generate: at least one seed image required");
  const int class_id = seeds.front().key.class_id;
  for (const auto& s : seeds)
    if (s.key.class_id != class_id) throw DomainError("generate: seed images span several classes");

  std::vector<std::size_t> chosen;
  std::vector<PoseVector> poses;
  for (const auto& req : requests) {
    std::size_t best = 0;
    double best_score = 1e300;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      const double score = angular_distance(seeds[i].key.azimuth_deg, req.azimuth_deg) +
                           (seeds[i].key.regime == req.regime ? 0.0 : 1000.0);
      if (score < best_score) {
        best_score = score;
        best = i;
      }
    }
    chosen.push_back(best);
    poses.push_back(encode_pose(seeds[best].key.azimuth_deg, req.azimuth_deg, req.regime));
  }

  std::vector<ViewSample> out;
  out.reserve(requests.size());
  double variance_sum = 0.0;
  for (std::size_t lo = 0; lo < requests.size(); lo += kChunk) {
    const std::size_t hi = std::min(requests.size(), lo + kChunk);
    std::vector<const Raster*> inputs;
    for (std::size_t i = lo; i < hi; ++i) inputs.push_back(&seeds[chosen[i]].image);
    const auto prediction =
        model.forward(images_to_batch<float>(std::span<const Raster* const>(inputs)),
                      poses_to_batch<float>(std::span<const PoseVector>(poses).subspan(lo, hi - lo)))
            .prediction;
    for (std::size_t i = lo; i < hi; ++i) {
      const auto y = row(prediction, i - lo);
      std::vector<float> pixels(y.begin(), y.end());
      double mean = 0.0;
      for (float& v : pixels) {
        v = std::clamp(v, -1.0f, 1.0f);
        mean += v;
      }
      mean /= static_cast<double>(pixels.size());
      double var = 0.0;
      for (float v : pixels) var += (v - mean) * (v - mean);
      variance_sum += var / static_cast<double>(pixels.size());
      ViewSample s;
      s.key = {class_id, requests[i].azimuth_deg, requests[i].regime, seeds[chosen[i]].key.range_m};
      s.image = Raster(std::move(pixels));
      out.push_back(std::move(s));
    }
  }
  if (!out.empty()) {
    const double mean_variance = variance_sum / static_cast<double>(out.size());
    if (mean_variance < min_variance) {
      std::ostringstream os;
      os << "generate: mean output variance " << mean_variance << " is below " << min_variance
         << "; the predictor looks untrained";
      throw DomainError(os.str());
    }
  }
  return out;
}

std::string to_string(EmbeddingStage stage) {
  return stage == EmbeddingStage::pre_fusion ? "pre_fusion" : "post_fusion";
}

EmbeddingStage parse_stage(const std::string& text) {
  if (text == "pre_fusion") return EmbeddingStage::pre_fusion;
  if (text == "post_fusion") return EmbeddingStage::post_fusion;
  throw DomainError("unknown embedding stage '" + text + "'");
}

std::vector<EmbeddingRecord> export_embeddings(const Predictor<float>& model, std::span<const ViewSample> samples,
                                               std::span<const double> pose_offsets_deg) {
  std::vector<EmbeddingRecord> records;
  records.reserve(samples.size() * (1 + pose_offsets_deg.size()));
  for (std::size_t lo = 0; lo < samples.size(); lo += kChunk) {
    const std::size_t hi = std::min(samples.size(), lo + kChunk);
    std::vector<const Raster*> inputs;
    for (std::size_t i = lo; i < hi; ++i) inputs.push_back(&samples[i].image);
    const Tensor<float> pre = model.encode(images_to_batch<float>(std::span<const Raster* const>(inputs)));
    std::vector<Tensor<float>> post;
    for (double offset : pose_offsets_deg) {
      std::vector<PoseVector> poses;
      for (std::size_t i = lo; i < hi; ++i) {
        const auto& k = samples[i].key;
        poses.push_back(encode_pose(k.azimuth_deg, std::fmod(k.azimuth_deg + offset + 360.0, 360.0), k.regime));
      }
      post.push_back(model.fuse(pre, model.pose_branch(poses_to_batch<float>(poses))));
    }
    for (std::size_t i = lo; i < hi; ++i) {
      const auto& k = samples[i].key;
      const auto p = row(pre, i - lo);
      records.push_back({k.class_id, k.regime, EmbeddingStage::pre_fusion, {p.begin(), p.end()}});
      for (const auto& t : post) {
        const auto q = row(t, i - lo);
        records.push_back({k.class_id, k.regime, EmbeddingStage::post_fusion, {q.begin(), q.end()}});
      }
    }
  }
  return records;
}

void save_embedding_records(const std::vector<EmbeddingRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  const std::size_t dim = records.empty() ? 0 : records.front().values.size();
  out << "class_id,day_night,stage";
  for (std::size_t i = 0; i < dim; ++i) out << ",v" << i;
  out << '\n';
  char buf[32];
  for (const auto& r : records) {
    if (r.values.size() != dim) throw ShapeError("embedding records have mixed lengths");
    out << r.class_id << ',' << regime_flag(r.regime) << ',' << to_string(r.stage);
    for (float v : r.values) {
      if (!std::isfinite(v)) throw DomainError("non-finite embedding value");
      const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
      out << ',' << std::string_view(buf, static_cast<std::size_t>(end - buf));
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<EmbeddingRecord> load_embedding_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("class_id,day_night,stage", 0) != 0)
    throw IoError(path.string() + ": missing embedding header");
  std::vector<EmbeddingRecord> records;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_commas(line);
    if (fields.size() < 3) throw IoError(path.string() + ":" + std::to_string(line_no) + ": too few fields");
    EmbeddingRecord r;
    r.class_id = std::stoi(fields[0]);
    r.regime = regime_from_flag(std::stoi(fields[1]));
    r.stage = parse_stage(fields[2]);
    for (std::size_t i = 3; i < fields.size(); ++i) {
      float v = 0.0f;
      const auto [ptr, ec] = std::from_chars(fields[i].data(), fields[i].data() + fields[i].size(), v);
      if (ec != std::errc() || ptr != fields[i].data() + fields[i].size())
        throw IoError(path.string() + ":" + std::to_string(line_no) + ": bad value '" + fields[i] + "'");
      r.values.push_back(v);
    }
    records.push_back(std::move(r));
  }
  return records;
}

LabelKey parse_label_key(const std::string& text) {
  if (text == "class_id" || text == "class") return LabelKey::class_id;
  if (text == "class_x_day_night" || text == "class*day_night") return LabelKey::class_x_day_night;
  throw DomainError("unknown label key '" + text + "'");
}

LabeledPoints select_stage(const std::vector<EmbeddingRecord>& records, EmbeddingStage stage, LabelKey key) {
  LabeledPoints out;
  for (const auto& r : records) {
    if (r.stage != stage) continue;
    if (out.points.dim == 0) out.points.dim = static_cast<int>(r.values.size());
    if (static_cast<int>(r.values.size()) != out.points.dim) throw ShapeError("embedding records have mixed lengths");
    out.points.values.insert(out.points.values.end(), r.values.begin(), r.values.end());
    out.labels.push_back(key == LabelKey::class_id ? r.class_id : 2 * r.class_id + regime_flag(r.regime));
    out.records.push_back(&r);
  }
  return out;
}

double embedding_silhouette(const std::vector<EmbeddingRecord>& records, EmbeddingStage stage, LabelKey key) {
  const LabeledPoints sel = select_stage(records, stage, key);
  return silhouette(sel.points, sel.labels);
}

}  // namespace irview
