from peps.policy import parse_policy


def P(line: str):
    """Policy from a short line: ``"5 DENY dst=10.0.0.5"``; omitted fields are ``*``."""
    if not line.startswith("PRIO"):
        line = "PRIO " + line
    body, _, comment = line.partition("#")
    fields = {"src": "*", "dst": "*", "sport": "*", "dport": "*", "proto": "*"}
    words = []
    for tok in body.split():
        if "=" in tok:
            k, v = tok.split("=", 1)
            fields[k] = v
        else:
            words.append(tok)
    text = " ".join(words) + " " + " ".join(f"{k}={v}" for k, v in fields.items())
    if comment.strip():
        text += " # " + comment.strip()
    return parse_policy(text)


def two_domain_fabric():
    """Domain A: s1 (hosts .1 .2), s2 (DP .5), core s3; domain B: b1 (host 10.1.0.7).

    s1 and s2 are edge switches, s3 is not.
    """
    from peps.routing import Fabric

    f = Fabric()
    for s in ("s1", "s2", "s3"):
        f.add_switch(s, "A")
    f.add_switch("b1", "B")
    f.add_host("10.0.0.1", "s1", 1)
    f.add_host("10.0.0.2", "s1", 2)
    f.add_host("10.0.0.5", "s2", 1)
    f.add_host("10.1.0.7", "b1", 1)
    f.add_link("s1", 3, "s2", 3)
    f.add_link("s1", 4, "s3", 1)
    f.add_link("s3", 2, "s2", 4)
    f.add_link("s2", 5, "b1", 2)
    return f
