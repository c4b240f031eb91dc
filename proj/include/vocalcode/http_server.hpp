#pragma once

#include <memory>
#include <string>

#include "vocalcode/error.hpp"
#include "vocalcode/service.hpp"

namespace vocalcode::http {

// Routes:
//   POST /sessions                               {coder_id, phase, set_index, queue_spec{seed, n_duplicates, segment_ids}}
//   GET  /sessions/{id}/next
//   POST /sessions/{id}/items/{item}/play        -> audio/wav, X-Remaining-Plays header
//   POST /sessions/{id}/items/{item}/label       {class: 1..5}
//   GET  /sessions/{id}/stats
//   GET  /reports/reliability?a=&b=
//   GET  /reports/analytics?metric=duration|f0&group_by=&test=pooled|welch[&a=&b=]
// Errors are {"code": ..., "message": ...} with the status from http_status().

/// 400 bad input, 404 unknown session/item/coder, 409 sequencing or
/// conflicting session, 422 statistics undefined for the data, 429 play
/// quota used up, 500 server-side I/O.
int http_status(ErrorCode code);

class Server {
 public:
  explicit Server(service::AnnotationService& service);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds without serving; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop(). Requires a successful bind().
  void listen();
  void stop();
  bool running() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace vocalcode::http
