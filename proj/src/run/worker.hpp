#pragma once

#include <string>

namespace fraglow::run {

// Long-running worker: binds the address, serves coordinator sessions until
// a Shutdown message arrives. A malformed frame drops the session and the
// worker keeps listening. Errc::Bind when the port is taken.
int serve_worker(const std::string& listen_addr);

// Same, but writes "<port>\n" to ready_fd once bound (port 0 supported).
int serve_worker_notify(const std::string& listen_addr, int ready_fd);

}  // namespace fraglow::run
