"""Raw-socket transport for real networks (Linux, needs CAP_NET_RAW).

Not exercised by the test suite. Outgoing probes are written with the IPv6
header included; replies come from an ICMPv6 raw socket, which strips the
IPv6 header, so a header is rebuilt from the sender address and the
scanner's own source address before handing the packet to the engine.
"""

from __future__ import annotations

import socket

from .codec import ipv6_header
from .engine import Transport, TransportFailure

IPV6_HDRINCL = getattr(socket, "IPV6_HDRINCL", 36)


class RawSocketTransport(Transport):
    def __init__(self, source: int, recv_hop_limit: int = 64):
        super().__init__()
        self.source = source
        self.recv_hop_limit = recv_hop_limit
        try:
            self._tx = socket.socket(socket.AF_INET6, socket.SOCK_RAW, socket.IPPROTO_RAW)
            self._tx.setsockopt(socket.IPPROTO_IPV6, IPV6_HDRINCL, 1)
            self._rx = socket.socket(socket.AF_INET6, socket.SOCK_RAW, socket.IPPROTO_ICMPV6)
        except PermissionError as exc:
            raise TransportFailure(
                "raw sockets need root or CAP_NET_RAW (try: sudo setcap cap_net_raw+ep $(which python3))"
            ) from exc
        self._rx.setblocking(False)

    def send(self, packet: bytes) -> None:
        self._check_open()
        dst = socket.inet_ntop(socket.AF_INET6, packet[24:40])
        try:
            self._tx.sendto(packet, (dst, 0))
        except BlockingIOError:
            pass
        except OSError as exc:
            raise TransportFailure(str(exc)) from exc

    def poll(self) -> list[bytes]:
        self._check_open()
        out = []
        while True:
            try:
                data, addr = self._rx.recvfrom(65535)
            except BlockingIOError:
                return out
            except OSError as exc:
                raise TransportFailure(str(exc)) from exc
            src = int.from_bytes(socket.inet_pton(socket.AF_INET6, addr[0].split("%")[0]), "big")
            out.append(ipv6_header(src, self.source, len(data), self.recv_hop_limit) + data)

    def close(self) -> None:
        super().close()
        self._tx.close()
        self._rx.close()
