#pragma once

#include <httplib.h>
#include <sys/socket.h>

namespace edgeai::detail {

// httplib defaults to SO_REUSEPORT, which lets a second server share a port
// that is already in use. Only SO_REUSEADDR is wanted.
inline void exclusive_bind(httplib::Server& server)
{
  server.set_socket_options([](socket_t sock) {
    int yes = 1;
    ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });
}

}  // namespace edgeai::detail
