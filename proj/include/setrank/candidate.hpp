#pragma once

#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace setrank {

struct Candidate {
  std::string doc_id;
  std::string title;
  std::string passage;
  double retrieval_score = 0.0;
  int first_stage_rank = 0;
  int feature = 0;  // discretized retrieval score, 0..100
};

// One query and the candidates retrieved for it, scored together.
struct CandidateSet {
  std::string query_id;
  std::string query_text;
  std::vector<Candidate> candidates;

  std::size_t size() const { return candidates.size(); }

  void validate() const {
    std::set<std::string> seen;
    for (const auto& c : candidates) {
      if (!seen.insert(c.doc_id).second) {
        throw std::invalid_argument("query " + query_id + ": duplicate candidate " +
                                    c.doc_id);
      }
    }
  }
};

}  // namespace setrank
