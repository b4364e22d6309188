#include <algorithm>
#include <numeric>
#include <set>

#include "pft/eval.hpp"
#include "pft/losses.hpp"

namespace pft::eval {

namespace {

std::int64_t argmax_row(std::span<const double> row) {
  return std::max_element(row.begin(), row.end()) - row.begin();
}

}  // namespace

double vp_score(const data::VpPairDataset& ds, const VpProtocol& protocol) {
  if (ds.x0.shape.size() != 4 || ds.x0.shape != ds.xT.shape)
    fail(ErrorKind::shape, "vp_score: pairs must be images [n, C, H, W]");
  if (ds.x0.shape[2] != ds.x0.shape[3]) fail(ErrorKind::shape, "vp_score: images must be square");
  if (ds.train.empty() || ds.test.empty()) fail(ErrorKind::usage, "vp_score: empty train or test split");
  if (protocol.epochs < 0 || protocol.batch < 1 || !(protocol.lr >= 0))
    fail(ErrorKind::usage, "vp_score: invalid protocol");
  std::set<std::int64_t> train_set(ds.train.begin(), ds.train.end());
  for (auto i : ds.test)
    if (train_set.count(i)) fail(ErrorKind::usage, "vp_score: index " + std::to_string(i) + " is in both splits");
  std::set<int> train_labels;
  for (auto i : ds.train) train_labels.insert(ds.labels[static_cast<std::size_t>(i)]);
  if (static_cast<int>(train_labels.size()) < ds.K)
    fail(ErrorKind::usage, "vp_score: train split covers " + std::to_string(train_labels.size()) + " of " +
                               std::to_string(ds.K) + " labels");

  std::mt19937_64 rng(protocol.seed);
  nn::ParamStore store;
  models::ClassifierConfig cc;
  cc.K = ds.K;
  cc.channels = static_cast<int>(ds.x0.shape[1]);
  cc.size = static_cast<int>(ds.x0.shape[2]);
  cc.widths = protocol.widths;
  models::IndexClassifier probe(cc, store, rng, nullptr, "probe/");
  auto adam = nn::make_adam(store, {protocol.lr});

  std::vector<std::int64_t> order = ds.train;
  for (int epoch = 0; epoch < protocol.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t lo = 0; lo < order.size(); lo += static_cast<std::size_t>(protocol.batch)) {
      const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(protocol.batch));
      std::vector<std::int64_t> rows(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                     order.begin() + static_cast<std::ptrdiff_t>(hi));
      std::vector<int> labels;
      for (auto r : rows) labels.push_back(ds.labels[static_cast<std::size_t>(r)]);
      ad::Tape tape;
      nn::Binding p(tape, store);
      Value logits = probe.logits(p, tape.constant(data::take_rows(ds.x0, rows)),
                                  tape.constant(data::take_rows(ds.xT, rows)), true);
      tape.backward(loss::loss_classifier(logits, labels));
      nn::adam_step(store, p.gradients(), adam);
    }
  }

  std::int64_t correct = 0;
  for (std::size_t lo = 0; lo < ds.test.size(); lo += 256) {
    const std::size_t hi = std::min(ds.test.size(), lo + 256);
    std::vector<std::int64_t> rows(ds.test.begin() + static_cast<std::ptrdiff_t>(lo),
                                   ds.test.begin() + static_cast<std::ptrdiff_t>(hi));
    ad::Tape tape;
    nn::Binding p(tape, store);
    Value logits = probe.logits(p, tape.constant(data::take_rows(ds.x0, rows)),
                                tape.constant(data::take_rows(ds.xT, rows)), false);
    for (std::size_t r = 0; r < rows.size(); ++r)
      correct += argmax_row(logits.data().subspan(r * static_cast<std::size_t>(ds.K), static_cast<std::size_t>(ds.K))) ==
                 ds.labels[static_cast<std::size_t>(rows[r])];
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(ds.test.size());
}

}  // namespace pft::eval
