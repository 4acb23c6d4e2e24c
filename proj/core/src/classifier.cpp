#include "irview/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "irview/errors.hpp"
#include "irview/model.hpp"

namespace irview {

namespace {

constexpr float kSlope = 0.2f;

void shuffle(std::vector<std::size_t>& order, std::mt19937_64& rng) {
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
}

std::vector<int> distinct_classes(std::span<const ViewSample> samples) {
  std::set<int> ids;
  for (const auto& s : samples) ids.insert(s.key.class_id);
  return {ids.begin(), ids.end()};
}

Tensor<float> batch_of(std::span<const ViewSample* const> samples) {
  std::vector<const Raster*> rasters;
  rasters.reserve(samples.size());
  for (const auto* s : samples) rasters.push_back(&s->image);
  return images_to_batch<float>(rasters);
}

// Canonical order: equal multisets of samples train identically regardless of input order.
std::vector<ViewSample> canonical(std::vector<ViewSample> samples) {
  std::stable_sort(samples.begin(), samples.end(), [](const ViewSample& a, const ViewSample& b) {
    if (a.key != b.key) return a.key < b.key;
    const auto va = a.image.values(), vb = b.image.values();
    return std::lexicographical_compare(va.begin(), va.end(), vb.begin(), vb.end());
  });
  return samples;
}

}  // namespace

void ClassifierConfig::validate() const {
  if (filters.empty()) throw DomainError("classifier: at least one conv block required");
  for (int f : filters)
    if (f <= 0) throw DomainError("classifier: filter counts must be positive");
  if (kernel <= 0 || kernel % 2 == 0) throw DomainError("classifier: kernel must be odd and positive");
  if (epochs <= 0 || batch_size <= 0) throw DomainError("classifier: epochs and batch_size must be positive");
  if (!(learning_rate > 0.0)) throw DomainError("classifier: learning_rate must be positive");
  int side = kImageSize;
  for (std::size_t i = 0; i < filters.size(); ++i) side = (side + 1) / 2;
  if (side < 1) throw DomainError("classifier: too many blocks for a 64x64 input");
}

KeyValueConfig ClassifierConfig::to_key_values() const {
  KeyValueConfig kv;
  kv.set("filters", filters);
  kv.set("kernel", kernel);
  kv.set("epochs", epochs);
  kv.set("batch_size", batch_size);
  kv.set("learning_rate", learning_rate);
  return kv;
}

ClassifierConfig ClassifierConfig::from_key_values(const KeyValueConfig& kv) {
  ClassifierConfig c;
  c.filters = kv.get_int_list("filters", c.filters);
  c.kernel = static_cast<int>(kv.get_int("kernel", c.kernel));
  c.epochs = static_cast<int>(kv.get_int("epochs", c.epochs));
  c.batch_size = static_cast<int>(kv.get_int("batch_size", c.batch_size));
  c.learning_rate = kv.get_double("learning_rate", c.learning_rate);
  c.validate();
  return c;
}

ConfusionMatrix::ConfusionMatrix(std::vector<int> class_ids) : class_ids_(std::move(class_ids)) {
  if (!std::is_sorted(class_ids_.begin(), class_ids_.end()) ||
      std::adjacent_find(class_ids_.begin(), class_ids_.end()) != class_ids_.end())
    throw DomainError("confusion matrix: class ids must be sorted and distinct");
  counts_.assign(class_ids_.size() * class_ids_.size(), 0);
}

int ConfusionMatrix::index_of(int class_id) const {
  const auto it = std::lower_bound(class_ids_.begin(), class_ids_.end(), class_id);
  if (it == class_ids_.end() || *it != class_id)
    throw LookupError("confusion matrix: unknown class " + std::to_string(class_id));
  return static_cast<int>(it - class_ids_.begin());
}

void ConfusionMatrix::add(int true_class_id, int predicted_class_id) {
  ++counts_[static_cast<std::size_t>(index_of(true_class_id) * size() + index_of(predicted_class_id))];
}

long long ConfusionMatrix::at(int t, int p) const {
  if (t < 0 || p < 0 || t >= size() || p >= size()) throw LookupError("confusion matrix: index out of range");
  return counts_[static_cast<std::size_t>(t * size() + p)];
}

long long ConfusionMatrix::row_sum(int t) const {
  long long s = 0;
  for (int p = 0; p < size(); ++p) s += at(t, p);
  return s;
}

long long ConfusionMatrix::total() const {
  long long s = 0;
  for (long long c : counts_) s += c;
  return s;
}

long long ConfusionMatrix::trace() const {
  long long s = 0;
  for (int i = 0; i < size(); ++i) s += at(i, i);
  return s;
}

double ConfusionMatrix::accuracy() const {
  const long long n = total();
  if (n == 0) throw DomainError("confusion matrix: no predictions");
  return static_cast<double>(trace()) / static_cast<double>(n);
}

double ConfusionMatrix::recall(int class_id) const {
  const int i = index_of(class_id);
  const long long n = row_sum(i);
  if (n == 0) throw DomainError("confusion matrix: no test samples for class " + std::to_string(class_id));
  return static_cast<double>(at(i, i)) / static_cast<double>(n);
}

std::string ConfusionMatrix::to_text() const {
  std::ostringstream os;
  os << std::setw(10) << "true\\pred";
  for (int id : class_ids_) os << std::setw(6) << id;
  os << '\n';
  for (int t = 0; t < size(); ++t) {
    os << std::setw(10) << class_ids_[static_cast<std::size_t>(t)];
    for (int p = 0; p < size(); ++p) os << std::setw(6) << at(t, p);
    os << '\n';
  }
  return os.str();
}

std::string ConfusionMatrix::to_records(const std::string& tag) const {
  std::ostringstream os;
  for (int t = 0; t < size(); ++t)
    for (int p = 0; p < size(); ++p)
      os << "confusion," << tag << ',' << class_ids_[static_cast<std::size_t>(t)] << ','
         << class_ids_[static_cast<std::size_t>(p)] << ',' << at(t, p) << '\n';
  return os.str();
}

Classifier::Classifier(std::vector<int> class_ids, const ClassifierConfig& config, std::uint64_t seed)
    : class_ids_(std::move(class_ids)) {
  config.validate();
  if (class_ids_.size() < 2) throw DomainError("classifier: need at least two classes");
  std::mt19937_64 rng(seed);
  int channels = 1, side = kImageSize;
  for (std::size_t i = 0; i < config.filters.size(); ++i) {
    convs_.emplace_back("classifier.conv" + std::to_string(i + 1), channels, config.filters[i], config.kernel, 2);
    auto& conv = convs_.back();
    init_uniform(conv.weight().value, std::sqrt(6.0 / ((1.0 + kSlope * kSlope) * conv.fan_in())), rng);
    channels = config.filters[i];
    side = conv.output_size(side);
  }
  head_ = Dense<float>("classifier.head", channels * side * side, static_cast<int>(class_ids_.size()));
  init_uniform(head_.weight().value, std::sqrt(6.0 / head_.fan_in()), rng);
}

ParameterList<float> Classifier::parameters() {
  ParameterList<float> out;
  for (auto& c : convs_) c.collect(out);
  head_.collect(out);
  return out;
}

Tensor<float> Classifier::logits(const Tensor<float>& images) const {
  Tensor<float> x = images;
  for (const auto& conv : convs_) {
    x = conv.forward(x);
    leaky_relu_inplace(x, kSlope);
  }
  const int b = x.dim(0);
  x.reshape({b, static_cast<int>(x.size()) / b});
  return head_.forward(x);
}

std::vector<int> Classifier::predict(std::span<const ViewSample> samples) const {
  std::vector<int> out;
  out.reserve(samples.size());
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < samples.size(); start += kChunk) {
    const std::size_t end = std::min(samples.size(), start + kChunk);
    std::vector<const ViewSample*> chunk;
    for (std::size_t i = start; i < end; ++i) chunk.push_back(&samples[i]);
    const Tensor<float> z = logits(batch_of(chunk));
    const int k = z.dim(1);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const float* row = z.data() + i * static_cast<std::size_t>(k);
      out.push_back(class_ids_[static_cast<std::size_t>(std::max_element(row, row + k) - row)]);
    }
  }
  return out;
}

double Classifier::train_batch(std::span<const ViewSample* const> batch, Adam<float>& optimizer, double lr) {
  const Tensor<float> images = batch_of(batch);
  std::vector<Tensor<float>> acts;
  acts.reserve(convs_.size() + 1);
  acts.push_back(images);
  for (const auto& conv : convs_) {
    Tensor<float> y = conv.forward(acts.back());
    leaky_relu_inplace(y, kSlope);
    acts.push_back(std::move(y));
  }
  const int b = static_cast<int>(batch.size());
  const Shape conv_shape = acts.back().shape();
  const Tensor<float> flat = acts.back().reshaped({b, static_cast<int>(acts.back().size()) / b});
  const Tensor<float> z = head_.forward(flat);
  const int k = z.dim(1);

  Tensor<float> dz({b, k});
  double loss = 0.0;
  for (int i = 0; i < b; ++i) {
    const float* row = z.data() + static_cast<std::size_t>(i) * k;
    const double zmax = *std::max_element(row, row + k);
    double sum = 0.0;
    for (int j = 0; j < k; ++j) sum += std::exp(row[j] - zmax);
    const int label = static_cast<int>(
        std::lower_bound(class_ids_.begin(), class_ids_.end(), batch[static_cast<std::size_t>(i)]->key.class_id) -
        class_ids_.begin());
    for (int j = 0; j < k; ++j) {
      const double p = std::exp(row[j] - zmax) / sum;
      dz[static_cast<std::size_t>(i) * k + j] = static_cast<float>((p - (j == label ? 1.0 : 0.0)) / b);
    }
    loss += -(row[label] - zmax - std::log(sum));
  }

  const auto params = parameters();
  zero_grads(params);
  Tensor<float> d = head_.backward(flat, dz);
  d.reshape(conv_shape);
  for (std::size_t l = convs_.size(); l-- > 0;) {
    leaky_relu_backward(acts[l + 1], d, kSlope);
    d = convs_[l].backward(acts[l], d, l > 0);
  }
  optimizer.step(lr);
  return loss / b;
}

ClassifierRun train_and_evaluate(std::span<const ViewSample> train, std::span<const ViewSample> test,
                                 const ClassifierConfig& config, std::uint64_t seed) {
  if (train.empty() || test.empty()) throw DomainError("classifier: train and test sets must be non-empty");
  const std::vector<int> ids = distinct_classes(train);
  for (const auto& s : test)
    if (!std::binary_search(ids.begin(), ids.end(), s.key.class_id))
      throw DomainError("classifier: test class " + std::to_string(s.key.class_id) + " absent from training data");

  Classifier model(ids, config, seed);
  Adam<float> adam(model.parameters());
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(train.size());
  ClassifierRun run;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle(order, rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<const ViewSample*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(&train[order[i]]);
      total += model.train_batch(batch, adam, config.learning_rate);
      ++batches;
    }
    run.epoch_loss.push_back(total / static_cast<double>(batches));
  }

  run.confusion = ConfusionMatrix(ids);
  const std::vector<int> predicted = model.predict(test);
  for (std::size_t i = 0; i < test.size(); ++i) run.confusion.add(test[i].key.class_id, predicted[i]);
  return run;
}

LowShotResult low_shot_eval(std::span<const ViewSample> real_train, std::span<const ViewSample> real_test,
                            int substituted_class, std::span<const ViewSample> generated,
                            const ClassifierConfig& config, std::uint64_t seed) {
  if (generated.empty()) throw DomainError("low-shot: generated corpus is empty");
  for (const auto& g : generated)
    if (g.key.class_id != substituted_class)
      throw DomainError("low-shot: generated corpus contains class " + std::to_string(g.key.class_id) +
                        " but only class " + std::to_string(substituted_class) + " is substituted");
  const auto has_class = [&](std::span<const ViewSample> s) {
    return std::any_of(s.begin(), s.end(), [&](const ViewSample& v) { return v.key.class_id == substituted_class; });
  };
  if (!has_class(real_train) || !has_class(real_test))
    throw DomainError("low-shot: class " + std::to_string(substituted_class) + " missing from the real splits");
  const std::vector<int> train_ids = distinct_classes(real_train), test_ids = distinct_classes(real_test);
  if (train_ids != test_ids) throw DomainError("low-shot: real train and test splits cover different classes");

  std::vector<ViewSample> all_real(real_train.begin(), real_train.end());
  std::vector<ViewSample> substituted;
  for (const auto& s : real_train)
    if (s.key.class_id != substituted_class) substituted.push_back(s);
  substituted.insert(substituted.end(), generated.begin(), generated.end());
  all_real = canonical(std::move(all_real));
  substituted = canonical(std::move(substituted));

  LowShotResult result;
  result.substituted_class = substituted_class;
  result.generated_count = generated.size();
  result.all_real = train_and_evaluate(all_real, real_test, config, seed).confusion;
  result.substituted = train_and_evaluate(substituted, real_test, config, seed).confusion;
  result.accuracy_all_real = result.all_real.accuracy();
  result.accuracy_substituted = result.substituted.accuracy();
  return result;
}

std::string LowShotResult::to_text() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "substituted class: " << substituted_class << " (" << generated_count << " generated images)\n";
  os << "accuracy all-real:    " << accuracy_all_real << '\n';
  os << "accuracy substituted: " << accuracy_substituted << '\n';
  os << "substituted-class recall all-real:    " << all_real.recall(substituted_class) << '\n';
  os << "substituted-class recall substituted: " << substituted.recall(substituted_class) << "\n\n";
  os << "confusion (all-real)\n" << all_real.to_text() << '\n';
  os << "confusion (substituted)\n" << substituted.to_text();
  return os.str();
}

std::string LowShotResult::to_records() const {
  std::ostringstream os;
  os << "accuracy,all_real," << format_double(accuracy_all_real) << '\n';
  os << "accuracy,substituted," << format_double(accuracy_substituted) << '\n';
  os << "recall,all_real," << substituted_class << ',' << format_double(all_real.recall(substituted_class)) << '\n';
  os << "recall,substituted," << substituted_class << ',' << format_double(substituted.recall(substituted_class))
     << '\n';
  os << all_real.to_records("all_real") << substituted.to_records("substituted");
  return os.str();
}

SampleSplit stratified_split(std::span<const ViewSample> samples, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw DomainError("stratified split: fraction must be in (0,1)");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < samples.size(); ++i) by_class[samples[i].key.class_id].push_back(i);
  std::mt19937_64 rng(seed);
  SampleSplit split;
  for (auto& [cls, idx] : by_class) {
    shuffle(idx, rng);
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(idx.size())));
    std::vector<std::size_t> test_idx(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
    std::vector<std::size_t> train_idx(idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
    std::sort(test_idx.begin(), test_idx.end());
    std::sort(train_idx.begin(), train_idx.end());
    for (auto i : test_idx) split.test.push_back(samples[i]);
    for (auto i : train_idx) split.train.push_back(samples[i]);
  }
  return split;
}

}  // namespace irview
