import { ItemSummary } from "./api.js";
import { debounce } from "./debounce.js";

export interface ItemSearch {
  searchItems(query: string): Promise<ItemSummary[]>;
}

/**
 * Debounced typeahead over GET /items for conditioning the next turn on a
 * catalog item. An empty query never issues a request; an empty result set
 * renders an explicit "no match" row; selecting then clearing leaves no
 * conditioned item behind.
 */
export class ItemPicker {
  readonly input: HTMLInputElement;
  selected: ItemSummary | null = null;
  onChange: (item: ItemSummary | null) => void = () => {};

  private readonly menu: HTMLElement;
  private readonly chip: HTMLElement;
  private readonly clearBtn: HTMLButtonElement;
  // stale results from an earlier keystroke must not overwrite newer ones
  private ticket = 0;

  constructor(
    private readonly client: ItemSearch,
    root: HTMLElement,
    waitMs = 200,
  ) {
    root.classList.add("picker");
    root.innerHTML =
      '<div class="picker__row">' +
      '<input class="picker__input" type="text"' +
      ' placeholder="condition on an item..." autocomplete="off">' +
      '<button class="picker__clear" type="button" hidden>clear</button>' +
      "</div>" +
      '<div class="picker__menu" hidden></div>' +
      '<div class="picker__chip" hidden></div>';
    this.input = root.querySelector<HTMLInputElement>(".picker__input")!;
    this.menu = root.querySelector<HTMLElement>(".picker__menu")!;
    this.chip = root.querySelector<HTMLElement>(".picker__chip")!;
    this.clearBtn = root.querySelector<HTMLButtonElement>(".picker__clear")!;
    this.input.addEventListener(
      "input",
      debounce(() => void this.search(), waitMs),
    );
    this.clearBtn.addEventListener("click", () => this.clear());
  }

  async search(): Promise<void> {
    const query = this.input.value.trim();
    if (!query) {
      this.closeMenu();
      return;
    }
    const ticket = ++this.ticket;
    let items: ItemSummary[];
    try {
      items = await this.client.searchItems(query);
    } catch (err) {
      if (ticket === this.ticket) {
        this.menu.innerHTML = "";
        this.menu.appendChild(this.note("search failed: " + String(err)));
        this.menu.hidden = false;
      }
      return;
    }
    if (ticket !== this.ticket) {
      return;
    }
    this.menu.innerHTML = "";
    if (items.length === 0) {
      this.menu.appendChild(this.note("no match"));
    } else {
      for (const item of items) {
        const option = document.createElement("button");
        option.type = "button";
        option.className = "picker__option";
        option.textContent = item.title + " (" + item.item_id + ")";
        option.addEventListener("click", () => this.select(item));
        this.menu.appendChild(option);
      }
    }
    this.menu.hidden = false;
  }

  select(item: ItemSummary): void {
    this.selected = item;
    this.input.value = "";
    this.closeMenu();
    this.chip.textContent =
      "conditioned on «" + item.title + "» (" + item.item_id + ")";
    this.chip.hidden = false;
    this.clearBtn.hidden = false;
    this.onChange(item);
  }

  clear(): void {
    this.selected = null;
    this.chip.hidden = true;
    this.chip.textContent = "";
    this.clearBtn.hidden = true;
    this.onChange(null);
  }

  setEnabled(enabled: boolean): void {
    this.input.disabled = !enabled;
    this.clearBtn.disabled = !enabled;
  }

  private closeMenu(): void {
    this.menu.hidden = true;
    this.menu.innerHTML = "";
  }

  private note(text: string): HTMLElement {
    const div = document.createElement("div");
    div.className = "picker__empty";
    div.textContent = text;
    return div;
  }
}
