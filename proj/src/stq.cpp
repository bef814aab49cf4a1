#include "vps/stq.hpp"

#include <cmath>
#include <sstream>

#include "vps/error.hpp"
#include "vps/keyvalue.hpp"

namespace vps {

double compute_stq(double aq, double sq) {
  if (!(aq >= 0.0 && aq <= 1.0) || !(sq >= 0.0 && sq <= 1.0)) {
    throw RangeError("compute_stq: inputs must lie in [0, 1], got AQ=" + format_double(aq) +
                     " SQ=" + format_double(sq));
  }
  return std::sqrt(aq * sq);
}

std::string StqReport::summary_line() const {
  return "STQ=" + format_double(stq) + " AQ=" + format_double(aq) + " SQ=" + format_double(sq);
}

std::string StqReport::to_text() const {
  std::ostringstream os;
  os << summary_line() << '\n';
  os << "pixels evaluated=" << evaluated_pixels << " void=" << void_pixels << '\n';
  os << "# class id name iou tp fp fn present\n";
  for (const auto& c : classes) {
    os << "class " << c.semantic_id << ' ' << c.name << ' ' << format_double(c.iou) << ' '
       << c.tp << ' ' << c.fp << ' ' << c.fn << ' ' << (c.present ? 1 : 0) << '\n';
  }
  os << "# track sequence semantic instance size aq\n";
  for (const auto& t : tracks) {
    os << "track " << t.sequence << ' ' << t.semantic_id << ' ' << t.instance_id << ' ' << t.size
       << ' ' << format_double(t.aq) << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------- SequenceStats

SequenceStats::SequenceStats(const ClassTable& classes)
    : classes_(classes),
      tp_(classes.size(), 0),
      fp_(classes.size(), 0),
      fn_(classes.size(), 0) {}

void SequenceStats::add_frame(const PanopticMap& prediction, const PanopticMap& ground_truth) {
  if (prediction.width != ground_truth.width || prediction.height != ground_truth.height) {
    throw ShapeError("prediction " + std::to_string(prediction.width) + "x" +
                     std::to_string(prediction.height) + " vs ground truth " +
                     std::to_string(ground_truth.width) + "x" +
                     std::to_string(ground_truth.height));
  }
  for (std::size_t i = 0; i < ground_truth.pixel_count(); ++i) {
    const auto g = classes_.index_of(ground_truth.semantic[i]);
    if (!g) {
      ++void_;
      continue;
    }
    ++evaluated_;
    const auto p = classes_.index_of(prediction.semantic[i]);
    if (p == g) {
      ++tp_[*g];
    } else {
      ++fn_[*g];
      if (p) ++fp_[*p];
    }

    const bool gt_tube = classes_.at(*g).is_thing && ground_truth.instance[i] != 0;
    const bool pred_tube = p && classes_.at(*p).is_thing && prediction.instance[i] != 0;
    const TubeKey gk{ground_truth.semantic[i], ground_truth.instance[i]};
    const TubeKey pk{prediction.semantic[i], prediction.instance[i]};
    if (gt_tube) ++gt_size_[gk];
    if (pred_tube) ++pred_size_[pk];
    if (gt_tube && pred_tube) ++inter_[{gk, pk}];
  }
}

void SequenceStats::merge(const SequenceStats& other) {
  if (tp_.empty()) {
    *this = other;
    return;
  }
  if (other.tp_.empty()) return;
  for (std::size_t c = 0; c < tp_.size(); ++c) {
    tp_[c] += other.tp_[c];
    fp_[c] += other.fp_[c];
    fn_[c] += other.fn_[c];
  }
  for (const auto& [k, v] : other.gt_size_) gt_size_[k] += v;
  for (const auto& [k, v] : other.pred_size_) pred_size_[k] += v;
  for (const auto& [k, v] : other.inter_) inter_[k] += v;
  evaluated_ += other.evaluated_;
  void_ += other.void_;
}

// ---------------------------------------------------------------- StqAccumulator

void StqAccumulator::add_frame(const std::string& sequence, const PanopticMap& prediction,
                               const PanopticMap& ground_truth) {
  auto [it, inserted] = sequences_.try_emplace(sequence, classes_);
  it->second.add_frame(prediction, ground_truth);
}

void StqAccumulator::add_sequence(const std::string& sequence,
                                  std::span<const PanopticMap> predictions,
                                  std::span<const PanopticMap> ground_truth) {
  if (predictions.size() != ground_truth.size()) {
    throw AlignmentError("sequence " + sequence + ": " + std::to_string(predictions.size()) +
                         " predicted frames vs " + std::to_string(ground_truth.size()) +
                         " ground-truth frames");
  }
  for (std::size_t f = 0; f < predictions.size(); ++f) {
    add_frame(sequence, predictions[f], ground_truth[f]);
  }
}

void StqAccumulator::merge(const StqAccumulator& other) {
  for (const auto& [name, stats] : other.sequences_) {
    auto [it, inserted] = sequences_.try_emplace(name, classes_);
    it->second.merge(stats);
  }
}

StqReport StqAccumulator::report() const {
  StqReport r;
  const std::size_t n = classes_.size();
  std::vector<std::uint64_t> tp(n, 0), fp(n, 0), fn(n, 0);
  double aq_total = 0.0;
  std::size_t tubes = 0;
  std::size_t pred_tubes = 0;

  for (const auto& [name, s] : sequences_) {
    for (std::size_t c = 0; c < n; ++c) {
      tp[c] += s.tp()[c];
      fp[c] += s.fp()[c];
      fn[c] += s.fn()[c];
    }
    r.evaluated_pixels += s.evaluated_pixels();
    r.void_pixels += s.void_pixels();
    pred_tubes += s.pred_tubes().size();

    auto inter_it = s.intersections().begin();
    for (const auto& [gk, g_size] : s.gt_tubes()) {
      double score = 0.0;
      // intersections are ordered by gt key first.
      while (inter_it != s.intersections().end() && inter_it->first.first < gk) ++inter_it;
      for (; inter_it != s.intersections().end() && inter_it->first.first == gk; ++inter_it) {
        const double in = static_cast<double>(inter_it->second);
        const double p_size = static_cast<double>(s.pred_tubes().at(inter_it->first.second));
        score += in * (in / (p_size + static_cast<double>(g_size) - in));
      }
      score /= static_cast<double>(g_size);
      r.tracks.push_back({name, gk.first, gk.second, g_size, score});
      aq_total += score;
      ++tubes;
    }
  }

  double sq_total = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < n; ++c) {
    ClassIou ci;
    ci.semantic_id = classes_.at(c).id;
    ci.name = classes_.at(c).name;
    ci.tp = tp[c];
    ci.fp = fp[c];
    ci.fn = fn[c];
    ci.present = tp[c] + fn[c] > 0;
    const std::uint64_t denom = tp[c] + fp[c] + fn[c];
    ci.iou = denom ? static_cast<double>(tp[c]) / static_cast<double>(denom) : 0.0;
    if (ci.present) {
      sq_total += ci.iou;
      ++present;
    }
    r.classes.push_back(std::move(ci));
  }
  // Vacuous cases: nothing to segment or nothing to associate counts as
  // perfect only when the prediction adds nothing either.
  r.sq = present ? sq_total / static_cast<double>(present) : 1.0;
  r.aq = tubes ? aq_total / static_cast<double>(tubes) : (pred_tubes ? 0.0 : 1.0);
  r.stq = compute_stq(r.aq, r.sq);
  return r;
}

SqResult compute_sq(std::span<const PanopticMap> predictions,
                    std::span<const PanopticMap> ground_truth, const ClassTable& classes) {
  StqAccumulator acc(classes);
  acc.add_sequence("sequence", predictions, ground_truth);
  StqReport r = acc.report();
  return {r.sq, std::move(r.classes)};
}

AqResult compute_aq(std::span<const PanopticMap> predictions,
                    std::span<const PanopticMap> ground_truth, const ClassTable& classes) {
  StqAccumulator acc(classes);
  acc.add_sequence("sequence", predictions, ground_truth);
  StqReport r = acc.report();
  return {r.aq, std::move(r.tracks)};
}

}  // namespace vps
