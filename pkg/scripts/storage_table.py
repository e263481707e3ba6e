"""Tag and data store sizes of the baseline and both Mirage variants."""

from mirage.analytic import StorageVariant, storage_report


def main():
    print(f"{'variant':<9} {'tag bits':>8} {'tag KB':>8} {'data bits':>9} {'data KB':>8} "
          f"{'total KB':>9} {'ratio':>6}")
    for v in StorageVariant:
        r = storage_report(variant=v)
        print(f"{v.value:<9} {r.tag.bits_per_entry:>8} {r.tag.kib:>8g} {r.data.bits_per_entry:>9} "
              f"{r.data.kib:>8g} {r.total_kib:>9g} {r.ratio:>6.1%}")


if __name__ == "__main__":
    main()
