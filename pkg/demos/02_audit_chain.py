"""Show the hash-chained audit log catching a one-character edit.

Appends a handful of deletion-lifecycle records, serializes them, flips
a single character in the middle of the log, and verifies: the chain
reports the exact first record that no longer checks out.
"""

from memscrub import AuditLog, AuditOp, verify_lines


def main():
    log = AuditLog()
    log.append(AuditOp.BLOCK, {"ids": [4, 7], "index_generation": 0})
    log.append(AuditOp.PRUNE, {"request_id": "demo", "counts": {"targets_deleted": 2}})
    log.append(AuditOp.DELETE, {"request_id": "demo", "ids": [4, 7, 9]})
    log.append(AuditOp.REBUILD, {"generation": 1})
    log.append(AuditOp.ARCHIVE, {"request_id": "demo"})

    lines = log.to_lines()
    print("clean log:")
    for line in lines:
        print("  " + line[:100] + ("..." if len(line) > 100 else ""))
    print(f"verify -> ok={verify_lines(lines).ok}")

    tampered = list(lines)
    pos = len(tampered[2]) // 2
    original = tampered[2][pos]
    tampered[2] = tampered[2][:pos] + ("x" if original != "x" else "y") + tampered[2][pos + 1:]
    result = verify_lines(tampered)
    print(f"\nflipped one character in record 2")
    print(f"verify -> ok={result.ok}, first_bad_index={result.first_bad_index}")


if __name__ == "__main__":
    main()
