import json
import signal
import subprocess
import sys
import time

import pytest

from concealed.cli import main

PASS = ["--passphrase", "pw"]


def _spawn(*args):
    proc = subprocess.Popen([sys.executable, "-m", "concealed.cli", *args], stdout=subprocess.PIPE,
                            stderr=subprocess.PIPE, text=True)
    line = proc.stdout.readline()
    if not line:
        proc.kill()
        raise RuntimeError(proc.stderr.read())
    return proc, line.split()


def _stop(proc):
    proc.send_signal(signal.SIGTERM)
    try:
        return proc.wait(10)
    except subprocess.TimeoutExpired:
        proc.kill()
        raise


@pytest.fixture(scope="module")
def server(tmp_path_factory):
    d = tmp_path_factory.mktemp("server")
    proc, words = _spawn("server", "run", "--listen", "127.0.0.1:0", "--key-file", str(d / "server.key"),
                         "--snapshot", str(d / "store.snap"))
    yield {"endpoint": words[2], "key_file": str(d / "server.key.pub"), "dir": d, "proc": proc}
    if proc.poll() is None:
        _stop(proc)


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out.strip(), out.err


def init(capsys, server, home, name, *extra):
    code, bundle, err = run(capsys, "client", "init", "--data-dir", str(home), *PASS, "--name", name,
                            "--server", server["endpoint"], "--server-key-file", server["key_file"], *extra)
    assert code == 0, err
    return bundle


def befriend(capsys, homes, bundles):
    (a, b), (ba, bb) = homes, bundles
    assert run(capsys, "client", "contact", "add", "--data-dir", str(a), *PASS, bb, "--verified")[0] == 0
    assert run(capsys, "client", "contact", "add", "--data-dir", str(b), *PASS, ba, "--verified")[0] == 0


def test_server_run_answers_frames(server):
    from concealed import wire
    from concealed.server import TcpConnection
    with TcpConnection(server["endpoint"]) as conn:
        reply = conn.request(wire.ReadAddress("0" * 32, 0))
    assert isinstance(reply, wire.Error) and reply.code == wire.NO_SUCH_ADDRESS


def test_client_profile_chat_and_address(server, tmp_path, capsys):
    alice, bob = tmp_path / "alice", tmp_path / "bob"
    bundles = init(capsys, server, alice, "alice"), init(capsys, server, bob, "bob")
    assert bundles[0].startswith("COSN1:")
    befriend(capsys, (alice, bob), bundles)

    code, root, _ = run(capsys, "client", "profile", "publish", "--data-dir", str(alice), *PASS,
                        "--field", "Name=alice", "--private", "City=Paris", "--grant", "bob")
    assert code == 0 and len(root) == 32

    code, chat, err = run(capsys, "client", "chat", "create", "--data-dir", str(alice), *PASS, "bob")
    assert code == 0, err
    assert run(capsys, "client", "chat", "send", "--data-dir", str(alice), *PASS, chat, "hello bob")[0] == 0
    code, text, err = run(capsys, "client", "chat", "read", "--data-dir", str(bob), *PASS, chat)
    assert code == 0, err
    assert text == "hello bob"

    code, c, _ = run(capsys, "client", "address", "create", "--data-dir", str(alice), *PASS, "--public-write")
    assert code == 0 and len(c) == 32


def test_data_dir_from_environment(server, tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("CONCEALED_DATA_DIR", str(tmp_path / "env-home"))
    monkeypatch.setenv("CONCEALED_PASSPHRASE", "pw2")
    code, _, err = run(capsys, "client", "init", "--name", "erin", "--server", server["endpoint"],
                       "--server-key-file", server["key_file"])
    assert code == 0, err
    assert (tmp_path / "env-home" / "keyring.bin").exists()
    assert run(capsys, "client", "address", "create")[0] == 0


def test_chat_invite_through_a_running_mix(server, tmp_path, capsys):
    directory = tmp_path / "mixes.json"
    mix, words = _spawn("mix", "run", "--server", server["endpoint"], "--server-key-file", server["key_file"],
                        "--name", "m1", "--batch", "2", "--timeout", "0.3", "--poll", "0.1",
                        "--directory", str(directory))
    try:
        assert words[:2] == ["mix", "m1"] and directory.exists()
        carol, dave = tmp_path / "carol", tmp_path / "dave"
        bundles = (init(capsys, server, carol, "carol", "--mixes", str(directory)),
                   init(capsys, server, dave, "dave", "--mixes", str(directory)))
        befriend(capsys, (carol, dave), bundles)
        code, chat, err = run(capsys, "client", "chat", "create", "--data-dir", str(carol), *PASS, "dave",
                              "--hops", "1")
        assert code == 0, err
        assert run(capsys, "client", "chat", "send", "--data-dir", str(carol), *PASS, chat, "via mix")[0] == 0
        deadline = time.monotonic() + 20
        while True:
            code, text, _ = run(capsys, "client", "chat", "read", "--data-dir", str(dave), *PASS, chat)
            if code == 0 or time.monotonic() > deadline:
                break
            time.sleep(0.2)
        assert code == 0 and text == "via mix"
    finally:
        assert _stop(mix) == 0


def test_usage_errors_exit_1(capsys, tmp_path):
    code, _, err = run(capsys, "server", "run", "--bogus")
    assert code == 1 and "usage:" in err
    assert run(capsys)[0] == 1
    code, _, err = run(capsys, "client", "chat", "read", "--data-dir", str(tmp_path), *PASS, "ab")
    assert code == 1 and "client init" in err


def test_protocol_errors_exit_2(server, tmp_path, capsys):
    wrong_key = "11" * 32
    code, _, err = run(capsys, "client", "init", "--data-dir", str(tmp_path / "x"), *PASS, "--name", "x",
                       "--server", server["endpoint"], "--server-key", wrong_key)
    assert code == 2, err
    assert not (tmp_path / "x" / "keyring.bin").exists()


def test_harness_run_is_reproducible(tmp_path, capsys):
    small = ["--users", "5", "--rounds", "3"]
    for name in ("a.json", "b.json"):
        assert run(capsys, "harness", "run", "--seed", "42", *small, "--out", str(tmp_path / name))[0] == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert json.loads((tmp_path / "a.json").read_text())["store"] == "concealed"


def test_harness_scenario_file_and_compare(tmp_path, capsys):
    scen = tmp_path / "s.json"
    assert run(capsys, "harness", "scenario", "--seed", "3", "--users", "5", "--rounds", "3",
               "--out", str(scen))[0] == 0
    for store in ("concealed", "baseline"):
        code, _, err = run(capsys, "harness", "run", "--scenario", str(scen), "--store", store,
                           "--out", str(tmp_path / f"{store}.json"), "--trace", str(tmp_path / f"{store}.trace"))
        assert code == 0, err
    code, table, _ = run(capsys, "harness", "compare", str(tmp_path / "concealed.json"),
                         str(tmp_path / "baseline.json"), "--json", str(tmp_path / "cmp.json"))
    assert code == 0
    assert table.splitlines()[0].split()[:3] == ["vector", "baseline", "concealed"]
    from concealed.harness import Comparison
    assert Comparison.from_json((tmp_path / "cmp.json").read_text()).to_text().strip() == table


def test_server_saves_snapshot_on_stop(server):
    assert _stop(server["proc"]) == 0
    doc = json.loads((server["dir"] / "store.snap").read_text())
    assert doc["format"] == "concealed-store-v1" and doc["addresses"]
