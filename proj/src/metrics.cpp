#include "creward/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

namespace creward {

PairIndex index_pairs(const std::vector<PairRecord>& pairs) {
  PairIndex out;
  for (const auto& p : pairs) out.emplace(p.pair_id, p);
  return out;
}

WinningRates winning_rates(std::span<const PreferenceLabel> labels, const PairIndex& pairs, CreativityType type,
                           std::span<const std::string> universe) {
  struct Decided {
    int wins = 0;
    int games = 0;
  };
  struct Resolved {
    const PairRecord* pair;
    Verdict verdict;
  };
  WinningRates out;
  std::vector<Resolved> games;
  games.reserve(labels.size());
  for (const auto& label : labels) {
    auto it = pairs.find(label.pair_id);
    if (it == pairs.end()) {
      out.warnings.push_back("label for unknown pair " + label.pair_id + " ignored");
      continue;
    }
    games.push_back({&it->second, label.verdict(type)});
  }

  std::map<std::string, Decided> decided;
  for (const auto& g : games) {
    auto& a = decided[g.pair->image_a];
    auto& b = decided[g.pair->image_b];
    ++out.table[g.pair->image_a].appearances;
    ++out.table[g.pair->image_b].appearances;
    if (g.verdict == Verdict::tie) continue;
    ++a.games;
    ++b.games;
    (g.verdict == Verdict::a ? a : b).wins += 1;
  }
  auto provisional = [&](const std::string& id) {
    const Decided& d = decided[id];
    return d.games == 0 ? 0.5 : static_cast<double>(d.wins) / d.games;
  };

  for (const auto& g : games) {
    auto& a = out.table[g.pair->image_a];
    auto& b = out.table[g.pair->image_b];
    switch (g.verdict) {
      case Verdict::a: a.wins += 1.0; break;
      case Verdict::b: b.wins += 1.0; break;
      case Verdict::tie: {
        const double pa = provisional(g.pair->image_a);
        const double pb = provisional(g.pair->image_b);
        if (pa > pb) {
          a.wins += 1.0;
        } else if (pb > pa) {
          b.wins += 1.0;
        } else {
          a.wins += 0.5;
          b.wins += 0.5;
        }
        break;
      }
    }
  }
  for (auto& [id, e] : out.table) e.rate = e.wins / e.appearances;
  for (const auto& id : universe) {
    if (!out.table.contains(id)) out.warnings.push_back("image " + id + " has no labeled comparison; excluded");
  }
  return out;
}

namespace {

Ranking average_ranks(std::vector<std::pair<std::string, double>> keyed) {
  std::sort(keyed.begin(), keyed.end(), [](const auto& x, const auto& y) {
    if (x.second != y.second) return x.second > y.second;
    return x.first < y.first;
  });
  Ranking out;
  std::size_t i = 0;
  while (i < keyed.size()) {
    std::size_t j = i;
    while (j < keyed.size() && keyed[j].second == keyed[i].second) ++j;
    const double rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) out[keyed[k].first] = rank;
    i = j;
  }
  return out;
}

}  // namespace

Ranking rank_by_rate(const WinningRateTable& table) {
  std::vector<std::pair<std::string, double>> keyed;
  keyed.reserve(table.size());
  for (const auto& [id, e] : table) keyed.emplace_back(id, e.rate);
  return average_ranks(std::move(keyed));
}

Ranking rank_by_score(const std::map<std::string, double>& scores) {
  return average_ranks({scores.begin(), scores.end()});
}

std::optional<double> spearman(const Ranking& r1, const Ranking& r2) {
  if (r1.size() != r2.size() ||
      !std::equal(r1.begin(), r1.end(), r2.begin(), [](const auto& a, const auto& b) { return a.first == b.first; })) {
    throw Error("mismatch", "spearman requires rankings over identical image sets");
  }
  const auto n = static_cast<double>(r1.size());
  if (r1.empty()) return std::nullopt;
  double m1 = 0.0;
  double m2 = 0.0;
  for (auto a = r1.begin(), b = r2.begin(); a != r1.end(); ++a, ++b) {
    m1 += a->second;
    m2 += b->second;
  }
  m1 /= n;
  m2 /= n;
  double num = 0.0;
  double d1 = 0.0;
  double d2 = 0.0;
  for (auto a = r1.begin(), b = r2.begin(); a != r1.end(); ++a, ++b) {
    const double x = a->second - m1;
    const double y = b->second - m2;
    num += x * y;
    d1 += x * x;
    d2 += y * y;
  }
  if (d1 == 0.0 || d2 == 0.0) return std::nullopt;
  return std::clamp(num / std::sqrt(d1 * d2), -1.0, 1.0);
}

AccuracyReport preference_accuracy(std::span<const PreferenceLabel> reference, const PairIndex& pairs,
                                   const std::map<std::string, double>& candidate_scores, CreativityType type) {
  std::map<std::string, Verdicts> verdicts;
  for (const auto& label : reference) {
    auto it = pairs.find(label.pair_id);
    if (it == pairs.end()) throw Error("mismatch", "reference label for unknown pair " + label.pair_id);
    const auto sa = candidate_scores.find(it->second.image_a);
    const auto sb = candidate_scores.find(it->second.image_b);
    if (sa == candidate_scores.end() || sb == candidate_scores.end()) {
      throw Error("mismatch", "candidate scores do not cover pair " + label.pair_id);
    }
    Verdict v = Verdict::tie;
    if (sa->second > sb->second) v = Verdict::a;
    if (sb->second > sa->second) v = Verdict::b;
    Verdicts all{};
    all.fill(Verdict::tie);
    all[index_of(type)] = v;
    verdicts[label.pair_id] = all;
  }
  return preference_accuracy(reference, verdicts, type);
}

AccuracyReport preference_accuracy(std::span<const PreferenceLabel> reference,
                                   const std::map<std::string, Verdicts>& candidate_verdicts, CreativityType type) {
  AccuracyReport r;
  for (const auto& label : reference) {
    const Verdict ref = label.verdict(type);
    if (ref == Verdict::tie) continue;
    auto it = candidate_verdicts.find(label.pair_id);
    if (it == candidate_verdicts.end()) throw Error("mismatch", "candidate does not cover pair " + label.pair_id);
    const Verdict cand = it->second[index_of(type)];
    ++r.evaluated;
    if (cand == Verdict::tie) {
      ++r.candidate_ties;
    } else if (cand == ref) {
      ++r.agreed;
    }
  }
  if (r.evaluated > 0) {
    r.accuracy = static_cast<double>(r.agreed) / r.evaluated;
    r.degenerate = r.candidate_ties == r.evaluated;
  }
  return r;
}

std::vector<PreferenceLabel> labels_from_scores(const std::vector<PairRecord>& pairs, const ScoreTable& scores,
                                                const std::string& annotator_id, const std::string& prompt_version) {
  std::vector<PreferenceLabel> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    const auto a = scores.find(p.image_a);
    const auto b = scores.find(p.image_b);
    if (a == scores.end() || b == scores.end()) throw Error("mismatch", "no scores for pair " + p.pair_id);
    PreferenceLabel label;
    label.pair_id = p.pair_id;
    label.annotator_id = annotator_id;
    label.prompt_version = prompt_version;
    for (CreativityType t : kAllTypes) {
      const double sa = a->second[index_of(t)];
      const double sb = b->second[index_of(t)];
      label.verdicts[index_of(t)] = sa > sb ? Verdict::a : (sb > sa ? Verdict::b : Verdict::tie);
    }
    out.push_back(std::move(label));
  }
  return out;
}

std::map<std::string, double> type_column(const ScoreTable& scores, CreativityType type) {
  std::map<std::string, double> out;
  for (const auto& [id, s] : scores) out.emplace(id, s[index_of(type)]);
  return out;
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd r;
  r.n = static_cast<int>(values.size());
  if (values.empty()) return r;
  r.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - r.mean) * (v - r.mean);
  r.std = std::sqrt(ss / static_cast<double>(values.size()));
  return r;
}

CorrelationSummary inter_annotator_correlation(const std::vector<std::vector<PreferenceLabel>>& per_annotator,
                                               const PairIndex& pairs, CreativityType type) {
  if (per_annotator.size() < 2) throw Error("coverage", "inter-annotator correlation needs at least two annotators");
  std::vector<Ranking> rankings;
  for (const auto& labels : per_annotator) rankings.push_back(rank_by_rate(winning_rates(labels, pairs, type).table));
  CorrelationSummary s;
  std::vector<double> rhos;
  for (std::size_t i = 0; i < rankings.size(); ++i) {
    for (std::size_t j = i + 1; j < rankings.size(); ++j) {
      auto rho = spearman(rankings[i], rankings[j]);
      if (!rho) {
        s.warnings.push_back("annotators " + std::to_string(i) + " and " + std::to_string(j) +
                             ": constant ranking, pair excluded");
        continue;
      }
      rhos.push_back(*rho);
    }
  }
  s.pairs_used = static_cast<int>(rhos.size());
  if (!rhos.empty()) {
    const MeanStd ms = mean_std(rhos);
    s.mean = ms.mean;
    s.std = ms.std;
  }
  return s;
}

WinningRateTable aggregate_human(const std::vector<std::vector<PreferenceLabel>>& per_annotator,
                                 const PairIndex& pairs, CreativityType type) {
  if (per_annotator.empty()) throw Error("coverage", "aggregate_human needs at least one annotator");
  std::vector<WinningRateTable> tables;
  for (const auto& labels : per_annotator) tables.push_back(winning_rates(labels, pairs, type).table);
  WinningRateTable out = tables.front();
  for (std::size_t i = 1; i < tables.size(); ++i) {
    if (tables[i].size() != out.size() ||
        !std::equal(tables[i].begin(), tables[i].end(), out.begin(),
                    [](const auto& a, const auto& b) { return a.first == b.first; })) {
      throw Error("coverage", "annotators rated different image sets; averaging is undefined");
    }
  }
  for (auto& [id, e] : out) {
    double rate = 0.0;
    double wins = 0.0;
    for (const auto& t : tables) {
      rate += t.at(id).rate;
      wins += t.at(id).wins;
    }
    e.rate = rate / static_cast<double>(tables.size());
    e.wins = wins / static_cast<double>(tables.size());
  }
  return out;
}

std::map<CreativityType, std::optional<double>> type_overall_correlation(
    const std::map<CreativityType, Ranking>& rankings) {
  auto overall = rankings.find(CreativityType::overall);
  if (overall == rankings.end()) throw Error("mismatch", "type_overall_correlation needs an overall ranking");
  std::map<CreativityType, std::optional<double>> out;
  for (CreativityType t : kAxisTypes) {
    auto it = rankings.find(t);
    if (it == rankings.end()) throw Error("mismatch", "missing ranking for " + std::string(to_string(t)));
    out[t] = spearman(it->second, overall->second);
  }
  return out;
}

std::map<std::string, std::vector<PreferenceLabel>> by_annotator(std::span<const PreferenceLabel> labels) {
  std::map<std::string, std::vector<PreferenceLabel>> out;
  for (const auto& l : labels) out[l.annotator_id].push_back(l);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

Json mean_std_json(std::vector<double> values) {
  if (values.empty()) return nullptr;
  const MeanStd ms = mean_std(values);
  return {{"mean", ms.mean}, {"std", ms.std}, {"n", ms.n}};
}

}  // namespace

Json metrics_report(const std::vector<PairRecord>& pairs, const std::vector<ImageRecord>& images,
                    const std::vector<PreferenceLabel>& human_labels,
                    const std::vector<CandidateSource>& candidates) {
  std::map<std::string, std::string> object_of;
  for (const auto& img : images) object_of[img.image_id] = img.object_category;
  std::map<std::string, std::vector<PairRecord>> pairs_by_object;
  for (const auto& p : pairs) {
    auto it = object_of.find(p.image_a);
    pairs_by_object[it == object_of.end() ? "unknown" : it->second].push_back(p);
  }

  Json report = {{"objects", Json::object()}, {"summary", Json::object()}, {"warnings", Json::array()}};
  // summary accumulators: type → source → metric → values
  std::map<std::string, std::map<std::string, std::map<std::string, std::vector<double>>>> acc;

  for (const auto& [object, obj_pairs] : pairs_by_object) {
    const PairIndex index = index_pairs(obj_pairs);
    auto in_object = [&](const std::vector<PreferenceLabel>& labels) {
      std::vector<PreferenceLabel> out;
      for (const auto& l : labels) {
        if (index.contains(l.pair_id)) out.push_back(l);
      }
      return out;
    };
    std::vector<std::vector<PreferenceLabel>> humans;
    for (auto& [id, labels] : by_annotator(human_labels)) {
      auto mine = in_object(labels);
      if (!mine.empty()) humans.push_back(std::move(mine));
    }
    if (humans.empty()) {
      report["warnings"].push_back("object " + object + ": no human labels");
      continue;
    }

    Json obj = Json::object();
    std::map<std::string, std::map<CreativityType, Ranking>> rankings;  // source → type → ranking
    for (CreativityType t : kAllTypes) {
      const std::string tname(to_string(t));
      Json entry = Json::object();
      if (humans.size() >= 2) {
        const auto inter = inter_annotator_correlation(humans, index, t);
        entry["inter_human"] = optional_json(inter.mean);
        if (inter.mean) acc[tname]["inter_human"]["rank_corr"].push_back(*inter.mean);
        for (const auto& w : inter.warnings) report["warnings"].push_back(object + "/" + tname + ": " + w);
      } else {
        entry["inter_human"] = nullptr;
      }
      const WinningRateTable human_avg = aggregate_human(humans, index, t);
      rankings["human"][t] = rank_by_rate(human_avg);
      Json cands = Json::object();
      for (const auto& cand : candidates) {
        const auto cand_labels = in_object(cand.labels);
        const auto table = winning_rates(cand_labels, index, t).table;
        Ranking cand_rank = rank_by_rate(table);
        rankings[cand.name][t] = cand_rank;
        std::optional<double> rho;
        if (cand_rank.size() == rankings["human"][t].size()) {
          rho = spearman(rankings["human"][t], cand_rank);
        } else {
          report["warnings"].push_back(object + "/" + tname + "/" + cand.name + ": coverage differs from humans");
        }
        std::map<std::string, Verdicts> verdicts;
        for (const auto& l : cand_labels) verdicts[l.pair_id] = l.verdicts;
        std::vector<double> accs;
        int degenerate = 0;
        for (const auto& h : humans) {
          const auto a = preference_accuracy(h, verdicts, t);
          if (a.accuracy) accs.push_back(*a.accuracy);
          if (a.degenerate) ++degenerate;
        }
        std::optional<double> accuracy;
        if (!accs.empty()) accuracy = mean_std(accs).mean;
        cands[cand.name] = {{"rank_corr", optional_json(rho)},
                            {"accuracy", optional_json(accuracy)},
                            {"degenerate_annotators", degenerate}};
        if (rho) acc[tname][cand.name]["rank_corr"].push_back(*rho);
        if (accuracy) acc[tname][cand.name]["accuracy"].push_back(*accuracy);
      }
      entry["candidates"] = cands;
      obj[tname] = entry;
    }
    Json tvo = Json::object();
    for (const auto& [source, by_type] : rankings) {
      if (by_type.size() != 4) continue;
      Json row = Json::object();
      for (const auto& [t, rho] : type_overall_correlation(by_type)) {
        row[std::string(to_string(t))] = optional_json(rho);
        if (rho) acc["type_vs_overall:" + std::string(to_string(t))][source]["rank_corr"].push_back(*rho);
      }
      tvo[source] = row;
    }
    obj["type_vs_overall"] = tvo;
    report["objects"][object] = obj;
  }

  for (auto& [type, sources] : acc) {
    for (auto& [source, metrics] : sources) {
      for (auto& [metric, values] : metrics) report["summary"][type][source][metric] = mean_std_json(values);
    }
  }
  return report;
}

std::string metrics_report_csv(const Json& report) {
  std::ostringstream out;
  out.precision(17);
  out << "object,type,source,metric,value\n";
  auto emit = [&](const std::string& object, const std::string& type, const std::string& source,
                  const std::string& metric, const Json& value) {
    out << object << ',' << type << ',' << source << ',' << metric << ',';
    if (value.is_number()) out << value.get<double>();
    out << '\n';
  };
  for (const auto& [object, obj] : report.at("objects").items()) {
    for (CreativityType t : kAllTypes) {
      const std::string tname(to_string(t));
      if (!obj.contains(tname)) continue;
      const Json& e = obj.at(tname);
      emit(object, tname, "human", "inter_human_rank_corr", e.at("inter_human"));
      for (const auto& [name, c] : e.at("candidates").items()) {
        emit(object, tname, name, "rank_corr", c.at("rank_corr"));
        emit(object, tname, name, "accuracy", c.at("accuracy"));
      }
    }
    for (const auto& [source, row] : obj.at("type_vs_overall").items()) {
      for (const auto& [tname, v] : row.items()) emit(object, tname, source, "type_vs_overall", v);
    }
  }
  for (const auto& [type, sources] : report.at("summary").items()) {
    for (const auto& [source, metrics] : sources.items()) {
      for (const auto& [metric, ms] : metrics.items()) {
        if (ms.is_null()) continue;
        emit("mean", type, source, metric, ms.at("mean"));
        emit("std", type, source, metric, ms.at("std"));
      }
    }
  }
  return out.str();
}

}  // namespace creward
