// Copyright 2026 The bnmr Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "bnmr/evidence.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "bnmr/csv.hpp"

namespace bnmr {

const Treatment& Network::treatment(int id) const {
  for (const auto& t : treatments)
    if (t.id == id) return t;
  throw ValidationError("unknown treatment id " + std::to_string(id));
}

LogHR hr_to_loghr(double hr, double ci_low, double ci_high, double level) {
  if (!(hr > 0.0) || !(ci_low > 0.0) || !(ci_high > 0.0))
    throw std::domain_error("hr_to_loghr: hr and CI endpoints must be positive");
  if (!(ci_low < ci_high))
    throw std::domain_error("hr_to_loghr: interval must have positive width");
  if (hr < ci_low || hr > ci_high)
    throw std::domain_error("hr_to_loghr: hr lies outside its own interval");
  if (!(level > 0.0 && level < 1.0))
    throw std::domain_error("hr_to_loghr: level must lie in (0,1)");
  const double z = normal_quantile(0.5 + level / 2.0);
  return {std::log(hr), (std::log(ci_high) - std::log(ci_low)) / (2.0 * z)};
}

ImputedCounts impute_missing_status(long long n_pos, long long n_neg, long long n_unknown,
                                    long long n_total) {
  if (n_pos < 0 || n_neg < 0 || n_unknown < 0)
    throw std::domain_error("impute_missing_status: negative count");
  if (n_pos + n_neg == 0)
    throw std::domain_error("impute_missing_status: no known-status subjects");
  if (n_pos + n_neg + n_unknown != n_total)
    throw std::domain_error("impute_missing_status: counts do not sum to n_total");
  const long long known = n_pos + n_neg;
  // ceil(n_unknown * n_pos / known) in exact integer arithmetic
  const long long extra = (n_unknown * n_pos + known - 1) / known;
  const long long final_n_pos = n_pos + extra;
  return {final_n_pos, static_cast<double>(final_n_pos) / static_cast<double>(n_total)};
}

double ipd_ppos(const IPDStudy& study) {
  if (study.subjects.empty()) throw ValidationError("ipd_ppos: study '" + study.study_id + "' has no subjects");
  long long pos = 0;
  for (const auto& s : study.subjects) pos += s.biomarker;
  return static_cast<double>(pos) / static_cast<double>(study.subjects.size());
}

TreatmentMap parse_treatment_map(std::istream& in, const std::string& source) {
  TreatmentMap map;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = csv::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto pos = t.find("->");
    if (pos == std::string::npos)
      throw ParseError(source + " line " + std::to_string(lineno) + ": expected 'label -> tag'");
    const std::string label = csv::trim(t.substr(0, pos));
    const std::string tag = csv::trim(t.substr(pos + 2));
    if (label.empty() || tag.empty())
      throw ParseError(source + " line " + std::to_string(lineno) + ": empty label or tag");
    if (map.count(label))
      throw ParseError(source + " line " + std::to_string(lineno) + ": duplicate label '" + label + "'");
    map[label] = tag;
  }
  return map;
}

TreatmentMap load_treatment_map(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  return parse_treatment_map(in, path);
}

std::vector<Treatment> treatments_from_map(const TreatmentMap& map) {
  std::set<std::string> tags;
  for (const auto& [label, tag] : map)
    if (tag != "exclude") tags.insert(tag);
  if (tags.empty()) throw ValidationError("treatment map declares no classes");
  std::vector<Treatment> out;
  int id = 0;
  for (const auto& tag : tags) out.push_back(Treatment{++id, tag});
  return out;
}

namespace {

// Resolves an arm label to a declared class id; 0 means "excluded row".
int resolve_class(const std::string& label, const TreatmentMap& map,
                  const std::vector<Treatment>& treatments, const std::string& where) {
  const auto it = map.find(label);
  if (it == map.end()) throw ParseError(where + ": unknown treatment label '" + label + "'");
  if (it->second == "exclude") return 0;
  for (const auto& t : treatments)
    if (t.label == it->second) return t.id;
  throw ParseError(where + ": label '" + label + "' maps to undeclared class '" + it->second + "'");
}

}  // namespace

std::vector<ADStudyRecord> ingest_ad(std::istream& in, const std::string& source,
                                     const TreatmentMap& map, const std::vector<Treatment>& treatments,
                                     std::vector<std::string>* warnings) {
  const csv::Table t = csv::read(in, source);
  const auto c_study = csv::column(t, "study_id");
  const auto c_ref = csv::column(t, "ref_treatment");
  const auto c_exp = csv::column(t, "exp_treatment");
  const auto c_hr = csv::column(t, "hr");
  const auto c_lo = csv::column(t, "ci_low");
  const auto c_hi = csv::column(t, "ci_high");
  const auto c_nt = csv::column(t, "n_total");
  const auto c_np = csv::column(t, "n_pos");
  const auto c_nn = csv::column(t, "n_neg");
  const auto c_nu = csv::column(t, "n_unknown");

  std::vector<ADStudyRecord> out;
  std::set<std::string> seen;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::string where = t.where(r);
    ADStudyRecord rec;
    rec.study_id = t.rows[r][c_study];
    if (rec.study_id.empty()) throw ParseError(where + ": empty study_id");
    if (!seen.insert(rec.study_id).second)
      throw ParseError(where + ": duplicate study_id '" + rec.study_id + "'");

    const int ref_id = resolve_class(t.rows[r][c_ref], map, treatments, where);
    const int exp_id = resolve_class(t.rows[r][c_exp], map, treatments, where);
    if (ref_id == 0 || exp_id == 0) {
      if (warnings)
        warnings->push_back(where + ": row '" + rec.study_id + "' excluded by treatment map");
      continue;
    }
    if (ref_id == exp_id)
      throw ParseError(where + ": both arms map to class '" +
                       t.rows[r][c_ref] + "' -> same id; comparison is degenerate");
    rec.treatment_k = ref_id;
    rec.treatment_l = exp_id;

    rec.hr = csv::to_double(t, r, c_hr);
    rec.ci_low = csv::to_double(t, r, c_lo);
    rec.ci_high = csv::to_double(t, r, c_hi);
    if (!(rec.hr > 0.0 && rec.ci_low > 0.0 && rec.ci_high > 0.0))
      throw ParseError(where + ": hr and CI endpoints must be positive");
    if (!(rec.ci_low < rec.ci_high))
      throw ParseError(where + ": ci_low must be below ci_high");
    if (rec.hr < rec.ci_low || rec.hr > rec.ci_high)
      throw ParseError(where + ": hr lies outside its CI");

    rec.n_total = csv::to_int(t, r, c_nt);
    rec.n_pos = csv::to_int(t, r, c_np);
    rec.n_neg = csv::to_int(t, r, c_nn);
    rec.n_unknown = csv::to_int(t, r, c_nu);
    if (rec.n_pos < 0 || rec.n_neg < 0 || rec.n_unknown < 0 || rec.n_total <= 0)
      throw ParseError(where + ": counts must be non-negative with n_total > 0");
    if (rec.n_pos + rec.n_neg + rec.n_unknown != rec.n_total)
      throw ParseError(where + ": n_pos+n_neg+n_unknown=" +
                       std::to_string(rec.n_pos + rec.n_neg + rec.n_unknown) +
                       " differs from n_total=" + std::to_string(rec.n_total));
    if (rec.n_pos + rec.n_neg == 0)
      throw ParseError(where + ": biomarker status unknown for every subject");
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<ADStudyRecord> ingest_ad_file(const std::string& path, const TreatmentMap& map,
                                          const std::vector<Treatment>& treatments,
                                          std::vector<std::string>* warnings) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  return ingest_ad(in, path, map, treatments, warnings);
}

std::vector<IPDStudy> ingest_ipd(std::istream& in, const std::string& source, const TreatmentMap& map,
                                 const std::vector<Treatment>& treatments) {
  const csv::Table t = csv::read(in, source);
  const auto c_study = csv::column(t, "study_id");
  const auto c_subj = csv::column(t, "subject_id");
  const auto c_trt = csv::column(t, "treatment");
  const auto c_bio = csv::column(t, "biomarker");
  const auto c_time = csv::column(t, "time");
  const auto c_event = csv::column(t, "event");

  struct RawSubject {
    SubjectRecord rec;
    int class_id;
  };
  std::map<std::string, std::vector<RawSubject>> by_study;
  std::vector<std::string> study_order;

  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::string where = t.where(r);
    const std::string study_id = t.rows[r][c_study];
    if (study_id.empty()) throw ParseError(where + ": empty study_id");
    RawSubject s;
    s.rec.subject_id = t.rows[r][c_subj];
    if (s.rec.subject_id.empty()) throw ParseError(where + ": empty subject_id");
    s.class_id = resolve_class(t.rows[r][c_trt], map, treatments, where);
    if (s.class_id == 0)
      throw ParseError(where + ": treatment label '" + t.rows[r][c_trt] +
                       "' is excluded by the map; IPD rows cannot be excluded");
    const long long bio = csv::to_int(t, r, c_bio);
    if (bio != 0 && bio != 1) throw ParseError(where + ": biomarker must be 0 or 1");
    s.rec.biomarker = static_cast<int>(bio);
    s.rec.time = csv::to_double(t, r, c_time);
    if (!(s.rec.time > 0.0) || !std::isfinite(s.rec.time))
      throw ParseError(where + ": time must be positive and finite");
    const long long ev = csv::to_int(t, r, c_event);
    if (ev != 0 && ev != 1) throw ParseError(where + ": event must be 0 or 1");
    s.rec.event = ev == 1;
    if (!by_study.count(study_id)) study_order.push_back(study_id);
    by_study[study_id].push_back(std::move(s));
  }

  std::vector<IPDStudy> out;
  for (const auto& id : study_order) {
    auto& raw = by_study[id];
    std::set<int> classes;
    std::set<std::string> subject_ids;
    for (const auto& s : raw) {
      classes.insert(s.class_id);
      if (!subject_ids.insert(s.rec.subject_id).second)
        throw ParseError(source + ": study '" + id + "' repeats subject_id '" + s.rec.subject_id + "'");
    }
    if (classes.size() != 2)
      throw ParseError(source + ": study '" + id + "' must contain exactly two treatment classes, found " +
                       std::to_string(classes.size()));
    IPDStudy study;
    study.study_id = id;
    study.treatment_k = *classes.begin();
    study.treatment_l = *classes.rbegin();
    for (auto& s : raw) {
      s.rec.arm = s.class_id == study.treatment_l ? 1 : 0;
      study.subjects.push_back(std::move(s.rec));
    }
    out.push_back(std::move(study));
  }
  return out;
}

std::vector<IPDStudy> ingest_ipd_file(const std::string& path, const TreatmentMap& map,
                                      const std::vector<Treatment>& treatments) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  return ingest_ipd(in, path, map, treatments);
}

std::vector<ADStudyRecord> prepare_ad(std::vector<ADStudyRecord> records) {
  for (auto& r : records) {
    const LogHR lh = hr_to_loghr(r.hr, r.ci_low, r.ci_high);
    r.y = lh.y;
    r.sigma = lh.sigma;
    r.prop_pos = impute_missing_status(r.n_pos, r.n_neg, r.n_unknown, r.n_total).prop_pos;
    if (r.treatment_k > r.treatment_l) {
      std::swap(r.treatment_k, r.treatment_l);
      r.y = -r.y;
      r.flipped = true;
    }
  }
  return records;
}

Network build_network(std::vector<Treatment> treatments, std::vector<ADStudyRecord> ad,
                      std::vector<IPDStudy> ipd) {
  if (treatments.empty()) throw ValidationError("network: no treatments declared");
  std::sort(treatments.begin(), treatments.end(),
            [](const Treatment& a, const Treatment& b) { return a.id < b.id; });
  std::set<std::string> labels;
  for (std::size_t i = 0; i < treatments.size(); ++i) {
    if (treatments[i].id != static_cast<int>(i) + 1)
      throw ValidationError("network: treatment ids must be dense 1..K; found id " +
                            std::to_string(treatments[i].id) + " at position " + std::to_string(i + 1));
    if (treatments[i].label.empty()) throw ValidationError("network: empty treatment label");
    if (!labels.insert(treatments[i].label).second)
      throw ValidationError("network: duplicate treatment label '" + treatments[i].label + "'");
  }
  const int K = static_cast<int>(treatments.size());

  const auto check_pair = [&](int k, int l, const std::string& study) {
    if (k < 1 || k > K || l < 1 || l > K)
      throw ValidationError("network: study '" + study + "' references undeclared treatment id");
    if (k == l) throw ValidationError("network: study '" + study + "' compares a class with itself");
  };

  std::set<std::string> ad_ids;
  for (auto& r : ad) {
    check_pair(r.treatment_k, r.treatment_l, r.study_id);
    if (!ad_ids.insert(r.study_id).second)
      throw ValidationError("network: duplicate AD study_id '" + r.study_id + "'");
    if (!std::isfinite(r.y) || !std::isfinite(r.sigma) || !std::isfinite(r.prop_pos))
      throw ValidationError("network: AD row '" + r.study_id + "' is not prepared (run prepare_ad)");
    if (!(r.sigma > 0.0))
      throw ValidationError("network: AD row '" + r.study_id + "' has non-positive sigma");
    if (r.prop_pos < 0.0 || r.prop_pos > 1.0)
      throw ValidationError("network: AD row '" + r.study_id + "' has prop_pos outside [0,1]");
    if (r.treatment_k > r.treatment_l)
      throw ValidationError("network: AD row '" + r.study_id + "' not in canonical direction");
  }
  std::sort(ad.begin(), ad.end(),
            [](const ADStudyRecord& a, const ADStudyRecord& b) { return a.study_id < b.study_id; });

  std::set<std::string> ipd_ids;
  for (auto& s : ipd) {
    check_pair(s.treatment_k, s.treatment_l, s.study_id);
    if (!ipd_ids.insert(s.study_id).second)
      throw ValidationError("network: duplicate IPD study_id '" + s.study_id + "'");
    if (s.treatment_k > s.treatment_l) {
      std::swap(s.treatment_k, s.treatment_l);
      for (auto& subj : s.subjects) subj.arm = 1 - subj.arm;
    }
    long long arm0 = 0, arm1 = 0;
    for (const auto& subj : s.subjects) {
      if (subj.arm != 0 && subj.arm != 1)
        throw ValidationError("network: study '" + s.study_id + "' has an arm code outside {0,1}");
      (subj.arm == 0 ? arm0 : arm1)++;
    }
    if (arm0 == 0 || arm1 == 0)
      throw ValidationError("network: IPD study '" + s.study_id + "' has an empty arm (arm " +
                            std::string(arm0 == 0 ? "0" : "1") + ")");
  }
  std::sort(ipd.begin(), ipd.end(),
            [](const IPDStudy& a, const IPDStudy& b) { return a.study_id < b.study_id; });

  std::set<std::pair<int, int>> contrast_set;
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(K) + 1);
  const auto add_edge = [&](int k, int l) {
    contrast_set.insert({std::min(k, l), std::max(k, l)});
    adj[static_cast<std::size_t>(k)].push_back(l);
    adj[static_cast<std::size_t>(l)].push_back(k);
  };
  for (const auto& r : ad) add_edge(r.treatment_k, r.treatment_l);
  for (const auto& s : ipd) add_edge(s.treatment_k, s.treatment_l);
  if (contrast_set.empty()) throw ValidationError("network: no studies supplied");

  // Connectivity over the union evidence graph.
  std::vector<int> component(static_cast<std::size_t>(K) + 1, 0);
  int n_comp = 0;
  for (int start = 1; start <= K; ++start) {
    if (component[static_cast<std::size_t>(start)] != 0) continue;
    ++n_comp;
    std::vector<int> stack{start};
    component[static_cast<std::size_t>(start)] = n_comp;
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      for (int v : adj[static_cast<std::size_t>(u)]) {
        if (component[static_cast<std::size_t>(v)] == 0) {
          component[static_cast<std::size_t>(v)] = n_comp;
          stack.push_back(v);
        }
      }
    }
  }
  if (n_comp > 1) {
    std::ostringstream msg;
    msg << "network: evidence graph is disconnected:";
    for (int c = 1; c <= n_comp; ++c) {
      msg << " {";
      bool first = true;
      for (const auto& t : treatments) {
        if (component[static_cast<std::size_t>(t.id)] == c) {
          if (!first) msg << ", ";
          msg << t.label;
          first = false;
        }
      }
      msg << "}";
    }
    throw ValidationError(msg.str());
  }

  Network net;
  net.treatments = std::move(treatments);
  net.ad = std::move(ad);
  net.ipd = std::move(ipd);
  net.contrasts.assign(contrast_set.begin(), contrast_set.end());
  return net;
}

}  // namespace bnmr
